//! Priority ledger and post-round settlement.
//!
//! Every lease moves one amount from the task owner (receiver) to the source
//! owner (provider). All amounts of a batch are priced from the balances as
//! they stood before the batch, then applied in assignment order.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matching::MatchResult;
use crate::model::{
    compute_settlement_amount, DeviceAccount, DeviceId, ModelError, SourceId, SourceNode, Task,
    TaskId, WeightsConfig,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SettlementError {
    #[error("assignment references unknown task {0}")]
    UnknownTask(TaskId),
    #[error("assignment references unknown source {0}")]
    UnknownSource(SourceId),
    #[error("device {0} has no ledger account")]
    UnknownDevice(DeviceId),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One priority transfer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettlementRecord {
    pub step: u64,
    pub task_id: TaskId,
    pub receiver: DeviceId,
    pub provider: DeviceId,
    pub amount: f64,
    /// Set when the formula produced a negative amount and it was clamped to 0.
    pub floored: bool,
}

/// Per-device priority balances. Only [`apply_settlement`] moves balance
/// between accounts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PriorityLedger {
    balances: BTreeMap<DeviceId, f64>,
    batches_applied: u64,
}

impl PriorityLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// A ledger with an account for every device, each holding `initial`.
    pub fn with_devices(devices: impl IntoIterator<Item = DeviceId>, initial: f64) -> Self {
        PriorityLedger {
            balances: devices.into_iter().map(|d| (d, initial)).collect(),
            batches_applied: 0,
        }
    }

    /// Opens an account. An existing account keeps its balance.
    pub fn register(&mut self, device: DeviceId, initial: f64) {
        self.balances.entry(device).or_insert(initial);
    }

    pub fn contains(&self, device: DeviceId) -> bool {
        self.balances.contains_key(&device)
    }

    pub fn balance_of(&self, device: DeviceId) -> f64 {
        self.balances.get(&device).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.balances.values().sum()
    }

    pub fn batches_applied(&self) -> u64 {
        self.batches_applied
    }

    pub fn len(&self) -> usize {
        self.balances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.balances.is_empty()
    }

    pub fn accounts(&self) -> impl Iterator<Item = DeviceAccount> + '_ {
        self.balances
            .iter()
            .map(|(&device_id, &priority_balance)| DeviceAccount {
                device_id,
                priority_balance,
            })
    }
}

/// Prices and applies one settlement batch.
///
/// Validation and pricing happen before the first balance moves, so an
/// error leaves the ledger untouched.
pub fn apply_settlement(
    matches: &MatchResult,
    tasks: &[Task],
    sources: &[SourceNode],
    ledger: &mut PriorityLedger,
    weights: &WeightsConfig,
    step: u64,
) -> Result<Vec<SettlementRecord>, SettlementError> {
    if matches.assignments.is_empty() {
        return Ok(Vec::new());
    }
    let tasks_by_id: HashMap<TaskId, &Task> = tasks.iter().map(|t| (t.id, t)).collect();
    let owners_by_source: HashMap<SourceId, DeviceId> =
        sources.iter().map(|s| (s.id, s.owner)).collect();

    let mut records = Vec::with_capacity(matches.assignments.len());
    for assignment in &matches.assignments {
        let task = *tasks_by_id
            .get(&assignment.task_id)
            .ok_or(SettlementError::UnknownTask(assignment.task_id))?;
        let provider = *owners_by_source
            .get(&assignment.source_id)
            .ok_or(SettlementError::UnknownSource(assignment.source_id))?;
        for device in [task.owner, provider] {
            if !ledger.contains(device) {
                return Err(SettlementError::UnknownDevice(device));
            }
        }
        let raw = compute_settlement_amount(task, ledger.balance_of(task.owner), weights)?;
        records.push(SettlementRecord {
            step,
            task_id: task.id,
            receiver: task.owner,
            provider,
            amount: raw.max(0.0),
            floored: raw < 0.0,
        });
    }

    for record in &records {
        *ledger
            .balances
            .get_mut(&record.receiver)
            .expect("checked above") -= record.amount;
        *ledger
            .balances
            .get_mut(&record.provider)
            .expect("checked above") += record.amount;
    }
    ledger.batches_applied += 1;
    Ok(records)
}
