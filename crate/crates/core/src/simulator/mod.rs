//! Discrete-time driver.
//!
//! Each step: age the queue and the pool, admit arrivals, escalate expired
//! tasks, run one matching round, settle, consume the leased sources, route
//! the leftovers, and sample metrics. The cloud baseline shares the arrival
//! stream but ships every task off immediately.

pub mod workload;

use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matching::{classify_unmatched, run_round};
use crate::metrics::{idle_capacity, AssignmentRecord, Policy, SimReport, StepSample};
use crate::model::{ModelError, SourceNode, Task, TaskId, WeightsConfig};
use crate::settlement::{apply_settlement, PriorityLedger};

pub use workload::{generate_arrivals, IdAllocator, UniformRange, WorkloadConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("invalid `{field}`: {reason}")]
    InvalidField { field: String, reason: String },
}

impl From<ModelError> for ConfigError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidWeight { field, reason } => ConfigError::InvalidField {
                field: format!("weights.{field}"),
                reason: reason.to_string(),
            },
            other => ConfigError::InvalidField {
                field: "weights".to_string(),
                reason: other.to_string(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub steps: u64,
    /// Wall-clock length of one step in seconds.
    pub step_seconds: f64,
    pub rng_seed: u64,
    pub policy: Policy,
    /// Starting balance of every device.
    pub initial_priority: f64,
    pub weights: WeightsConfig,
    pub workload: WorkloadConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            steps: 200,
            step_seconds: 1.0,
            rng_seed: 1,
            policy: Policy::Crl,
            initial_priority: 0.0,
            weights: WeightsConfig::default(),
            workload: WorkloadConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.steps < 1 {
            return Err(ConfigError::InvalidField {
                field: "steps".to_string(),
                reason: "must be at least 1".to_string(),
            });
        }
        if !self.step_seconds.is_finite() || self.step_seconds <= 0.0 {
            return Err(ConfigError::InvalidField {
                field: "step_seconds".to_string(),
                reason: format!("must be positive and finite, got {}", self.step_seconds),
            });
        }
        if !self.initial_priority.is_finite() {
            return Err(ConfigError::InvalidField {
                field: "initial_priority".to_string(),
                reason: "must be finite".to_string(),
            });
        }
        self.weights.validate()?;
        self.workload.validate()
    }
}

/// A source in the pool together with its time bookkeeping.
///
/// `idle_seconds` of the node is always `window - (used + lease)`. `used` is
/// the part of the window already gone; `lease` is the busy time handed out
/// during the current step. At the next step boundary the source is charged
/// `max(lease, step_seconds)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledSource {
    pub node: SourceNode,
    window: f64,
    used: f64,
    lease: f64,
}

impl PooledSource {
    fn new(node: SourceNode) -> Self {
        PooledSource {
            window: node.idle_seconds,
            used: 0.0,
            lease: 0.0,
            node,
        }
    }

    fn advance(&mut self, step_seconds: f64) {
        self.used += self.lease.max(step_seconds);
        self.lease = 0.0;
        self.node.idle_seconds = self.window - self.used;
    }

    fn lease(&mut self, busy_seconds: f64) {
        self.lease = busy_seconds;
        self.node.idle_seconds = self.window - (self.used + busy_seconds);
    }
}

/// Cumulative escalated volume, always summed in task-id order so that the
/// same set of tasks yields the same total under any policy.
#[derive(Debug, Clone, Default)]
struct MigrationTally {
    tasks: BTreeMap<TaskId, (f64, f64)>,
    value_cum: f64,
    cycles_cum: f64,
}

impl MigrationTally {
    fn add(&mut self, batch: &[Task]) {
        if batch.is_empty() {
            return;
        }
        let appends = match (
            self.tasks.keys().next_back(),
            batch.iter().map(|t| t.id).min(),
        ) {
            (Some(&last), Some(first)) => first > last,
            _ => true,
        };
        for task in batch {
            self.tasks
                .insert(task.id, (task.value, task.cycles_required));
        }
        if appends {
            let mut fresh: Vec<&Task> = batch.iter().collect();
            fresh.sort_by_key(|t| t.id);
            for task in fresh {
                self.value_cum += task.value;
                self.cycles_cum += task.cycles_required;
            }
        } else {
            self.value_cum = 0.0;
            self.cycles_cum = 0.0;
            for &(value, cycles) in self.tasks.values() {
                self.value_cum += value;
                self.cycles_cum += cycles;
            }
        }
    }
}

/// Mutable state of one run.
#[derive(Debug, Clone)]
pub struct SimState {
    pub step: u64,
    /// Tasks waiting for a source: deferred ones plus this step's arrivals.
    pub pending: Vec<Task>,
    /// Sources on offer, in ascending id order.
    pub pool: Vec<PooledSource>,
    pub ledger: PriorityLedger,
    pub report: SimReport,
    rng: ChaCha8Rng,
    ids: IdAllocator,
    migrated: MigrationTally,
}

impl SimState {
    pub fn new(config: &SimConfig) -> Self {
        SimState {
            step: 0,
            pending: Vec::new(),
            pool: Vec::new(),
            ledger: PriorityLedger::with_devices(
                config.workload.devices(),
                config.initial_priority,
            ),
            report: SimReport::empty(config.policy, config.rng_seed),
            rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
            ids: IdAllocator::default(),
            migrated: MigrationTally::default(),
        }
    }

    /// Places tasks and sources directly into the queue and the pool. Before
    /// the first step they behave like step-0 arrivals; between steps they
    /// age with the next step like anything carried over. Identifiers must
    /// not collide with generated ones. Unknown owners get a ledger account.
    pub fn inject(&mut self, tasks: Vec<Task>, sources: Vec<SourceNode>, initial_priority: f64) {
        for task in &tasks {
            self.ledger.register(task.owner, initial_priority);
        }
        for source in &sources {
            self.ledger.register(source.owner, initial_priority);
        }
        let totals = &mut self.report.totals;
        totals.arrived_tasks += tasks.len() as u64;
        totals.arrived_sources += sources.len() as u64;
        totals.arrived_value += tasks.iter().map(|t| t.value).sum::<f64>();
        self.pending.extend(tasks);
        self.pool.extend(sources.into_iter().map(PooledSource::new));
        self.pool.sort_by_key(|s| s.node.id);
    }

    /// Consumes the state and returns the finished report.
    pub fn into_report(self) -> SimReport {
        self.finish()
    }

    pub fn pool_nodes(&self) -> impl Iterator<Item = &SourceNode> {
        self.pool.iter().map(|p| &p.node)
    }

    /// Ages everything carried over from the previous step.
    fn advance_clock(&mut self, step_seconds: f64) {
        if self.step == 0 {
            return;
        }
        for task in &mut self.pending {
            task.deadline_s -= step_seconds;
        }
        for source in &mut self.pool {
            source.advance(step_seconds);
        }
        self.pool.retain(|s| s.node.idle_seconds > 0.0);
    }

    fn admit_arrivals(&mut self, config: &SimConfig) -> Vec<Task> {
        let (tasks, sources) =
            generate_arrivals(&config.workload, &mut self.rng, self.step, &mut self.ids);
        let totals = &mut self.report.totals;
        totals.arrived_tasks += tasks.len() as u64;
        totals.arrived_sources += sources.len() as u64;
        totals.arrived_value += tasks.iter().map(|t| t.value).sum::<f64>();
        self.pool.extend(sources.into_iter().map(PooledSource::new));
        tasks
    }

    fn migrate(&mut self, tasks: &[Task]) {
        self.migrated.add(tasks);
        self.report.totals.migrated += tasks.len() as u64;
    }

    fn push_sample(
        &mut self,
        arrived: u64,
        matched: u64,
        deferred: u64,
        migrated: u64,
        expired: u64,
    ) {
        let sample = StepSample {
            step: self.step,
            policy: self.report.policy,
            arrived,
            idle_capacity: idle_capacity(self.pool_nodes()),
            matched,
            deferred,
            migrated,
            expired,
            migrated_value_cum: self.migrated.value_cum,
            migrated_cycles_cum: self.migrated.cycles_cum,
        };
        self.report.samples.push(sample);
    }

    fn finish(mut self) -> SimReport {
        self.report.totals.pending = self.pending.len() as u64;
        self.report.final_ledger = self
            .ledger
            .accounts()
            .map(|a| (a.device_id, a.priority_balance))
            .collect();
        self.report
    }
}

/// One leasing step.
pub fn step_crl(state: &mut SimState, config: &SimConfig) {
    let step = state.step;
    let weights = &config.weights;

    state.advance_clock(config.step_seconds);
    let arrivals = state.admit_arrivals(config);
    let arrived = arrivals.len() as u64;
    state.pending.extend(arrivals);

    let (expired, live): (Vec<Task>, Vec<Task>) = std::mem::take(&mut state.pending)
        .into_iter()
        .partition(|t| t.deadline_s <= 0.0);
    state.migrate(&expired);
    state.report.totals.expired += expired.len() as u64;

    let sources: Vec<SourceNode> = state.pool_nodes().cloned().collect();
    let (ordered, result) = run_round(&live, &sources, &state.ledger, weights);

    let settlements = apply_settlement(
        &result,
        &ordered,
        &sources,
        &mut state.ledger,
        weights,
        step,
    )
    .expect("every owner holds a ledger account");
    state.report.settlements.extend(settlements);

    let row_of: HashMap<_, usize> = sources.iter().enumerate().map(|(i, s)| (s.id, i)).collect();
    let task_of: HashMap<TaskId, &Task> = ordered.iter().map(|t| (t.id, t)).collect();
    for assignment in &result.assignments {
        let row = row_of[&assignment.source_id];
        let task = task_of[&assignment.task_id];
        let source = &sources[row];
        state.report.assignments.push(AssignmentRecord {
            step,
            task_id: task.id,
            source_id: source.id,
            cycles_required: task.cycles_required,
            deadline_s: task.deadline_s,
            cycles_per_second: source.cycles_per_second,
            idle_seconds: source.idle_seconds,
            busy_seconds: assignment.busy_seconds,
        });
        // The pool and `sources` share row order.
        state.pool[row].lease(assignment.busy_seconds);
    }
    state.pool.retain(|s| s.node.idle_seconds > 0.0);
    let matched = result.assignments.len() as u64;
    state.report.totals.matched += matched;

    let unmatched: Vec<Task> = result
        .unmatched_task_ids
        .iter()
        .map(|id| task_of[id].clone())
        .collect();
    let routed = classify_unmatched(unmatched, weights);
    state.migrate(&routed.big_tasks);
    let deferred = routed.deferred.len() as u64;
    state.pending = routed.deferred;

    let migrated = (expired.len() + routed.big_tasks.len()) as u64;
    state.push_sample(arrived, matched, deferred, migrated, expired.len() as u64);
    state.step += 1;
}

/// One cloud-offloading step: every arrival is migrated at once and the pool
/// only shrinks with time.
pub fn step_cloud(state: &mut SimState, config: &SimConfig) {
    state.advance_clock(config.step_seconds);
    let arrivals = state.admit_arrivals(config);
    let arrived = arrivals.len() as u64;
    // Only injected tasks can be waiting here.
    let mut outgoing = std::mem::take(&mut state.pending);
    outgoing.extend(arrivals);
    state.migrate(&outgoing);
    state.push_sample(arrived, 0, 0, outgoing.len() as u64, 0);
    state.step += 1;
}

/// Runs `config.steps` steps of the configured policy from a fresh state.
pub fn run(config: &SimConfig) -> Result<SimReport, ConfigError> {
    config.validate()?;
    let mut state = SimState::new(config);
    let step_fn = match config.policy {
        Policy::Crl => step_crl,
        Policy::Cloud => step_cloud,
    };
    for _ in 0..config.steps {
        step_fn(&mut state, config);
    }
    Ok(state.finish())
}

/// Runs independent simulations, in parallel when the `parallel` feature is
/// on. Output order follows `configs`.
pub fn run_batch(configs: &[SimConfig]) -> Vec<Result<SimReport, ConfigError>> {
    #[cfg(feature = "parallel")]
    {
        run_batch_parallel(configs)
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_batch_sequential(configs)
    }
}

pub fn run_batch_sequential(configs: &[SimConfig]) -> Vec<Result<SimReport, ConfigError>> {
    configs.iter().map(run).collect()
}

#[cfg(feature = "parallel")]
pub fn run_batch_parallel(configs: &[SimConfig]) -> Vec<Result<SimReport, ConfigError>> {
    use rayon::prelude::*;
    configs.par_iter().map(run).collect()
}
