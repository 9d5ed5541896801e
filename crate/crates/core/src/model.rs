//! Domain records shared by the matching engine, the ledger and the simulator.
//!
//! Units: task sizes are CPU cycles, source rates are cycles per second, and
//! all times are seconds. Task value is a dimensionless scalar.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

macro_rules! id_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u64);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                self.0.fmt(f)
            }
        }
    };
}

id_newtype!(
    /// Identifier of a computation task.
    TaskId
);
id_newtype!(
    /// Identifier of an idle compute source.
    SourceId
);
id_newtype!(
    /// Identifier of a network member; owns tasks, sources and a priority balance.
    DeviceId
);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("task {0}: cycles_required must be positive and finite")]
    NonPositiveCycles(TaskId),
    #[error("task {0}: value must be non-negative and finite")]
    NegativeValue(TaskId),
    #[error("task {0}: deadline must be positive at creation")]
    NonPositiveDeadline(TaskId),
    #[error("source {0}: cycles_per_second must be positive and finite")]
    NonPositiveRate(SourceId),
    #[error("source {0}: idle_seconds must be non-negative and finite")]
    NegativeIdle(SourceId),
    #[error("weights: {field} {reason}")]
    InvalidWeight {
        field: &'static str,
        reason: &'static str,
    },
}

/// One unit of computation demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    pub owner: DeviceId,
    /// Seconds left before the task must be finished.
    pub deadline_s: f64,
    pub cycles_required: f64,
    pub value: f64,
    pub arrival_step: u64,
    /// Number of matching rounds this task has already lost.
    pub rounds_deferred: u32,
}

impl Task {
    pub fn new(
        id: TaskId,
        owner: DeviceId,
        deadline_s: f64,
        cycles_required: f64,
        value: f64,
        arrival_step: u64,
    ) -> Result<Self, ModelError> {
        let task = Task {
            id,
            owner,
            deadline_s,
            cycles_required,
            value,
            arrival_step,
            rounds_deferred: 0,
        };
        task.validate()?;
        if !deadline_s.is_finite() || deadline_s <= 0.0 {
            return Err(ModelError::NonPositiveDeadline(id));
        }
        Ok(task)
    }

    /// Checks the invariants that hold for the whole lifetime of a task.
    /// The deadline is only required to be positive at creation.
    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.cycles_required.is_finite() || self.cycles_required <= 0.0 {
            return Err(ModelError::NonPositiveCycles(self.id));
        }
        if !self.value.is_finite() || self.value < 0.0 {
            return Err(ModelError::NegativeValue(self.id));
        }
        Ok(())
    }
}

/// An idle or semi-idle provider offering compute for a bounded window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceNode {
    pub id: SourceId,
    pub owner: DeviceId,
    pub idle_seconds: f64,
    pub cycles_per_second: f64,
}

impl SourceNode {
    pub fn new(
        id: SourceId,
        owner: DeviceId,
        idle_seconds: f64,
        cycles_per_second: f64,
    ) -> Result<Self, ModelError> {
        let source = SourceNode {
            id,
            owner,
            idle_seconds,
            cycles_per_second,
        };
        source.validate()?;
        Ok(source)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.cycles_per_second.is_finite() || self.cycles_per_second <= 0.0 {
            return Err(ModelError::NonPositiveRate(self.id));
        }
        if !self.idle_seconds.is_finite() || self.idle_seconds < 0.0 {
            return Err(ModelError::NegativeIdle(self.id));
        }
        Ok(())
    }

    /// Cycles this source can still deliver: rate times remaining idle time.
    pub fn capacity(&self) -> f64 {
        self.cycles_per_second * self.idle_seconds
    }
}

/// A device's priority balance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceAccount {
    pub device_id: DeviceId,
    pub priority_balance: f64,
}

/// Tunable weights of the matching-priority and settlement formulas, plus the
/// retry budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsConfig {
    /// Weight of value per cycle in the matching priority.
    pub gamma_t: f64,
    /// Weight of the owner's balance in the matching priority.
    pub gamma_p: f64,
    /// Weight of task value in the settlement amount.
    pub gamma_n: f64,
    /// Weight of the receiver's balance in the settlement amount.
    pub gamma_m: f64,
    /// Conversion rate between task volume and priority.
    pub conversion_rate_r: f64,
    /// Failed matching rounds after which a task is sent to the cloud.
    pub max_rounds_w: u32,
    /// Membership latency bound in seconds. Informational only.
    pub tau_s: f64,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        WeightsConfig {
            gamma_t: 0.5,
            gamma_p: 0.5,
            gamma_n: 0.5,
            gamma_m: 0.5,
            conversion_rate_r: 1.0,
            max_rounds_w: 3,
            tau_s: 0.01,
        }
    }
}

impl WeightsConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (field, gamma) in [
            ("gamma_t", self.gamma_t),
            ("gamma_p", self.gamma_p),
            ("gamma_n", self.gamma_n),
            ("gamma_m", self.gamma_m),
        ] {
            if !(0.0..=1.0).contains(&gamma) {
                return Err(ModelError::InvalidWeight {
                    field,
                    reason: "must lie in [0, 1]",
                });
            }
        }
        if !self.conversion_rate_r.is_finite() || self.conversion_rate_r <= 0.0 {
            return Err(ModelError::InvalidWeight {
                field: "conversion_rate_r",
                reason: "must be positive and finite",
            });
        }
        if self.max_rounds_w < 1 {
            return Err(ModelError::InvalidWeight {
                field: "max_rounds_w",
                reason: "must be at least 1",
            });
        }
        if !self.tau_s.is_finite() || self.tau_s < 0.0 {
            return Err(ModelError::InvalidWeight {
                field: "tau_s",
                reason: "must be non-negative and finite",
            });
        }
        Ok(())
    }
}

/// Matching priority of a task: `gamma_t * value / cycles + gamma_p * owner_priority`.
///
/// `owner_priority` is the owner's current ledger balance, read at call time.
pub fn compute_matching_priority(
    task: &Task,
    owner_priority: f64,
    weights: &WeightsConfig,
) -> Result<f64, ModelError> {
    task.validate()?;
    Ok(matching_priority_unchecked(task, owner_priority, weights))
}

#[inline]
pub(crate) fn matching_priority_unchecked(
    task: &Task,
    owner_priority: f64,
    weights: &WeightsConfig,
) -> f64 {
    weights.gamma_t * (task.value / task.cycles_required) + weights.gamma_p * owner_priority
}

/// Priority a receiver owes for one completed lease:
/// `(gamma_n * value + gamma_m * owner_priority) * R`.
///
/// The raw formula can go negative for an over-drawn receiver; flooring is
/// the ledger's business, not this function's.
pub fn compute_settlement_amount(
    task: &Task,
    owner_priority: f64,
    weights: &WeightsConfig,
) -> Result<f64, ModelError> {
    task.validate()?;
    Ok(
        (weights.gamma_n * task.value + weights.gamma_m * owner_priority)
            * weights.conversion_rate_r,
    )
}
