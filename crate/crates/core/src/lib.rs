//! Computation resource leasing inside a priority-aggregated local network.
//!
//! Devices with spare cycles lease them to devices with pending work and are
//! paid in priority; accumulated priority moves a device's own tasks forward
//! in later matching rounds. Tasks that no local source can take within the
//! retry budget are escalated to the cloud.
//!
//! * [`model`]: tasks, sources, weights and the two scalar formulas.
//! * [`matching`]: one greedy matching round.
//! * [`settlement`]: the priority ledger.
//! * [`simulator`]: discrete-time loop and the cloud baseline.
//! * [`metrics`]: time series, CSV/JSON output and policy comparison.
//! * [`cli`]: the `crl` command line.

pub mod cli;
pub mod matching;
pub mod metrics;
pub mod model;
pub mod settlement;
pub mod simulator;

pub use matching::{
    build_prefer_matrix, classify_unmatched, feasible, greedy_match, sort_tasks_by_priority,
    Assignment, Classification, MatchResult, PreferenceMatrix,
};
pub use metrics::{compare_reports, emit_report, idle_capacity, Policy, ReportFormat, SimReport};
pub use model::{
    compute_matching_priority, compute_settlement_amount, DeviceId, SourceId, SourceNode, Task,
    TaskId, WeightsConfig,
};
pub use settlement::{apply_settlement, PriorityLedger, SettlementRecord};
pub use simulator::{run, run_batch, SimConfig, WorkloadConfig};
