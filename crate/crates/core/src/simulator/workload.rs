//! Seeded arrival generation.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::ConfigError;
use crate::model::{DeviceId, SourceId, SourceNode, Task, TaskId};

/// Closed interval sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformRange {
    pub min: f64,
    pub max: f64,
}

impl UniformRange {
    pub const fn new(min: f64, max: f64) -> Self {
        UniformRange { min, max }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.min == self.max {
            self.min
        } else {
            rng.random_range(self.min..=self.max)
        }
    }

    fn check(&self, field: &'static str, strictly_positive: bool) -> Result<(), ConfigError> {
        let lower_ok = if strictly_positive {
            self.min > 0.0
        } else {
            self.min >= 0.0
        };
        if !self.min.is_finite() || !self.max.is_finite() || !lower_ok || self.min > self.max {
            let bound = if strictly_positive {
                "0 < min"
            } else {
                "0 <= min"
            };
            return Err(ConfigError::InvalidField {
                field: field.to_string(),
                reason: format!("expected {bound} <= max, got [{}, {}]", self.min, self.max),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    /// Mean task arrivals per step.
    pub task_arrival_rate: f64,
    /// Mean source arrivals per step.
    pub source_arrival_rate: f64,
    pub cycles_required: UniformRange,
    pub value: UniformRange,
    pub deadline_s: UniformRange,
    pub idle_seconds: UniformRange,
    pub cycles_per_second: UniformRange,
    /// Tasks and sources are owned by devices `0..device_count`.
    pub device_count: u64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            task_arrival_rate: 30.0,
            source_arrival_rate: 50.0,
            cycles_required: UniformRange::new(1.0, 200.0),
            value: UniformRange::new(1.0, 10.0),
            deadline_s: UniformRange::new(5.0, 60.0),
            idle_seconds: UniformRange::new(30.0, 60.0),
            cycles_per_second: UniformRange::new(1.0, 4.0),
            device_count: 100,
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (field, rate) in [
            ("workload.task_arrival_rate", self.task_arrival_rate),
            ("workload.source_arrival_rate", self.source_arrival_rate),
        ] {
            if !rate.is_finite() || rate < 0.0 {
                return Err(ConfigError::InvalidField {
                    field: field.to_string(),
                    reason: format!("must be a finite rate >= 0, got {rate}"),
                });
            }
        }
        self.cycles_required
            .check("workload.cycles_required", true)?;
        self.value.check("workload.value", false)?;
        self.deadline_s.check("workload.deadline_s", true)?;
        self.idle_seconds.check("workload.idle_seconds", true)?;
        self.cycles_per_second
            .check("workload.cycles_per_second", true)?;
        if self.device_count == 0 {
            return Err(ConfigError::InvalidField {
                field: "workload.device_count".to_string(),
                reason: "must be at least 1".to_string(),
            });
        }
        Ok(())
    }

    /// Devices that own tasks and sources.
    pub fn devices(&self) -> impl Iterator<Item = DeviceId> {
        (0..self.device_count).map(DeviceId)
    }
}

/// Monotone identifier counters for one run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdAllocator {
    next_task: u64,
    next_source: u64,
}

impl IdAllocator {
    fn task(&mut self) -> TaskId {
        let id = TaskId(self.next_task);
        self.next_task += 1;
        id
    }

    fn source(&mut self) -> SourceId {
        let id = SourceId(self.next_source);
        self.next_source += 1;
        id
    }
}

fn poisson_count<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    let dist = Poisson::new(rate).expect("validated positive finite rate");
    dist.sample(rng) as u64
}

/// Draws one step's arrivals. Counts are Poisson, fields uniform over the
/// configured ranges. Draw order is fixed, so a seed fully determines the
/// arrival stream whatever policy consumes it.
pub fn generate_arrivals<R: Rng + ?Sized>(
    config: &WorkloadConfig,
    rng: &mut R,
    step: u64,
    ids: &mut IdAllocator,
) -> (Vec<Task>, Vec<SourceNode>) {
    let task_count = poisson_count(config.task_arrival_rate, rng);
    let source_count = poisson_count(config.source_arrival_rate, rng);

    let tasks = (0..task_count)
        .map(|_| Task {
            id: ids.task(),
            owner: DeviceId(rng.random_range(0..config.device_count)),
            deadline_s: config.deadline_s.sample(rng),
            cycles_required: config.cycles_required.sample(rng),
            value: config.value.sample(rng),
            arrival_step: step,
            rounds_deferred: 0,
        })
        .collect();
    let sources = (0..source_count)
        .map(|_| SourceNode {
            id: ids.source(),
            owner: DeviceId(rng.random_range(0..config.device_count)),
            idle_seconds: config.idle_seconds.sample(rng),
            cycles_per_second: config.cycles_per_second.sample(rng),
        })
        .collect();
    (tasks, sources)
}
