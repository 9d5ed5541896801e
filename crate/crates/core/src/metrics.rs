//! Per-step time series, report serialization, and policy comparison.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DeviceId, SourceId, SourceNode, TaskId};
use crate::settlement::SettlementRecord;

/// Which handling policy produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    /// Local leasing with priority settlement.
    Crl,
    /// Every task goes straight to the cloud.
    Cloud,
}

impl Policy {
    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Crl => "crl",
            Policy::Cloud => "cloud",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "crl" => Ok(Policy::Crl),
            "cloud" => Ok(Policy::Cloud),
            other => Err(format!("unknown policy `{other}` (expected crl or cloud)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown format `{other}` (expected csv or json)")),
        }
    }
}

/// Metrics sampled at the end of one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSample {
    pub step: u64,
    pub policy: Policy,
    /// Tasks that arrived during this step.
    pub arrived: u64,
    /// Cycles still on offer in the pool after this step's matching.
    pub idle_capacity: f64,
    pub matched: u64,
    pub deferred: u64,
    /// Tasks sent to the cloud during this step, expired ones included.
    pub migrated: u64,
    /// Of `migrated`, those whose deadline ran out while queued.
    pub expired: u64,
    pub migrated_value_cum: f64,
    pub migrated_cycles_cum: f64,
}

/// A lease as seen at match time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentRecord {
    pub step: u64,
    pub task_id: TaskId,
    pub source_id: SourceId,
    pub cycles_required: f64,
    pub deadline_s: f64,
    pub cycles_per_second: f64,
    pub idle_seconds: f64,
    pub busy_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTotals {
    pub arrived_tasks: u64,
    pub arrived_sources: u64,
    pub arrived_value: f64,
    pub matched: u64,
    pub migrated: u64,
    pub expired: u64,
    pub pending: u64,
}

/// Everything a run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub policy: Policy,
    pub seed: u64,
    pub samples: Vec<StepSample>,
    pub assignments: Vec<AssignmentRecord>,
    pub settlements: Vec<SettlementRecord>,
    pub final_ledger: BTreeMap<DeviceId, f64>,
    pub totals: RunTotals,
}

impl SimReport {
    pub fn empty(policy: Policy, seed: u64) -> Self {
        SimReport {
            policy,
            seed,
            samples: Vec::new(),
            assignments: Vec::new(),
            settlements: Vec::new(),
            final_ledger: BTreeMap::new(),
            totals: RunTotals::default(),
        }
    }

    pub fn final_migrated_value(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.migrated_value_cum)
    }
}

/// Total cycles the pool can still deliver.
pub fn idle_capacity<'a>(pool: impl IntoIterator<Item = &'a SourceNode>) -> f64 {
    pool.into_iter().map(SourceNode::capacity).sum()
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("failed to write report to {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed report csv: {0}")]
    Parse(#[from] csv::Error),
    #[error("failed to encode report: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot compare reports of {left} and {right} steps")]
    LengthMismatch { left: usize, right: usize },
}

/// The CSV columns, in order.
pub const CSV_HEADER: [&str; 8] = [
    "step",
    "policy",
    "idle_capacity",
    "matched",
    "deferred",
    "migrated",
    "migrated_value_cum",
    "migrated_cycles_cum",
];

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub step: u64,
    pub policy: Policy,
    pub idle_capacity: f64,
    pub matched: u64,
    pub deferred: u64,
    pub migrated: u64,
    pub migrated_value_cum: f64,
    pub migrated_cycles_cum: f64,
}

impl From<&StepSample> for CsvRow {
    fn from(s: &StepSample) -> Self {
        CsvRow {
            step: s.step,
            policy: s.policy,
            idle_capacity: s.idle_capacity,
            matched: s.matched,
            deferred: s.deferred,
            migrated: s.migrated,
            migrated_value_cum: s.migrated_value_cum,
            migrated_cycles_cum: s.migrated_cycles_cum,
        }
    }
}

/// Writes the per-step series as CSV. The header is always written, so a
/// report without steps yields a header-only file.
pub fn write_csv<W: Write>(rows: &[CsvRow], writer: W) -> Result<(), csv::Error> {
    let mut out = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(writer);
    out.write_record(CSV_HEADER)?;
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn parse_csv<R: Read>(reader: R) -> Result<Vec<CsvRow>, csv::Error> {
    let mut input = csv::Reader::from_reader(reader);
    input.deserialize().collect()
}

pub fn csv_rows(report: &SimReport) -> Vec<CsvRow> {
    report.samples.iter().map(CsvRow::from).collect()
}

/// Writes `report` to `destination` in the requested format.
pub fn emit_report(
    report: &SimReport,
    format: ReportFormat,
    destination: &Path,
) -> Result<(), MetricsError> {
    let write_err = |source: io::Error| MetricsError::Write {
        path: destination.to_path_buf(),
        source,
    };
    let file = File::create(destination).map_err(write_err)?;
    let mut writer = BufWriter::new(file);
    match format {
        ReportFormat::Csv => {
            write_csv(&csv_rows(report), &mut writer).map_err(|e| match e.into_kind() {
                csv::ErrorKind::Io(io) => write_err(io),
                other => MetricsError::Write {
                    path: destination.to_path_buf(),
                    source: io::Error::other(format!("{other:?}")),
                },
            })?
        }
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut writer, report)?;
            writer.write_all(b"\n").map_err(write_err)?;
        }
    }
    writer.flush().map_err(write_err)
}

/// Step-by-step differences between two runs, `a - b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub left: Policy,
    pub right: Policy,
    pub steps: usize,
    pub idle_capacity_delta: Vec<f64>,
    pub migrated_value_delta: Vec<f64>,
    pub migrated_cycles_delta: Vec<f64>,
    pub mean_idle_capacity_left: f64,
    pub mean_idle_capacity_right: f64,
    pub mean_idle_capacity_delta: f64,
    pub mean_migrated_value_delta: f64,
    pub mean_migrated_cycles_delta: f64,
    /// Fraction of steps with `a.idle_capacity <= b.idle_capacity`.
    pub idle_capacity_le_fraction: f64,
    /// Fraction of steps with `a.migrated_value_cum <= b.migrated_value_cum`.
    pub migrated_value_le_fraction: f64,
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len();
    if n == 0 {
        0.0
    } else {
        xs.sum::<f64>() / n as f64
    }
}

fn fraction(hits: usize, n: usize) -> f64 {
    if n == 0 {
        1.0
    } else {
        hits as f64 / n as f64
    }
}

pub fn compare_reports(a: &SimReport, b: &SimReport) -> Result<ComparisonSummary, MetricsError> {
    if a.samples.len() != b.samples.len() {
        return Err(MetricsError::LengthMismatch {
            left: a.samples.len(),
            right: b.samples.len(),
        });
    }
    let pairs = || a.samples.iter().zip(&b.samples);
    let idle_delta: Vec<f64> = pairs()
        .map(|(x, y)| x.idle_capacity - y.idle_capacity)
        .collect();
    let value_delta: Vec<f64> = pairs()
        .map(|(x, y)| x.migrated_value_cum - y.migrated_value_cum)
        .collect();
    let cycles_delta: Vec<f64> = pairs()
        .map(|(x, y)| x.migrated_cycles_cum - y.migrated_cycles_cum)
        .collect();
    let n = a.samples.len();
    Ok(ComparisonSummary {
        left: a.policy,
        right: b.policy,
        steps: n,
        mean_idle_capacity_left: mean(a.samples.iter().map(|s| s.idle_capacity)),
        mean_idle_capacity_right: mean(b.samples.iter().map(|s| s.idle_capacity)),
        mean_idle_capacity_delta: mean(idle_delta.iter().copied()),
        mean_migrated_value_delta: mean(value_delta.iter().copied()),
        mean_migrated_cycles_delta: mean(cycles_delta.iter().copied()),
        idle_capacity_le_fraction: fraction(
            pairs()
                .filter(|(x, y)| x.idle_capacity <= y.idle_capacity)
                .count(),
            n,
        ),
        migrated_value_le_fraction: fraction(
            pairs()
                .filter(|(x, y)| x.migrated_value_cum <= y.migrated_value_cum)
                .count(),
            n,
        ),
        idle_capacity_delta: idle_delta,
        migrated_value_delta: value_delta,
        migrated_cycles_delta: cycles_delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(step: u64, idle: f64, value_cum: f64) -> StepSample {
        StepSample {
            step,
            policy: Policy::Crl,
            arrived: 0,
            idle_capacity: idle,
            matched: 1,
            deferred: 0,
            migrated: 0,
            expired: 0,
            migrated_value_cum: value_cum,
            migrated_cycles_cum: 2.0 * value_cum,
        }
    }

    fn report(samples: Vec<StepSample>) -> SimReport {
        SimReport {
            samples,
            ..SimReport::empty(Policy::Crl, 1)
        }
    }

    #[test]
    fn idle_capacity_sums_rate_times_idle() {
        assert_eq!(idle_capacity(&[]), 0.0);
        let pool = [SourceNode {
            id: SourceId(1),
            owner: DeviceId(1),
            idle_seconds: 5.0,
            cycles_per_second: 10.0,
        }];
        assert_eq!(idle_capacity(&pool), 50.0);
    }

    #[test]
    fn empty_report_is_header_only() {
        let mut buf = Vec::new();
        write_csv(&[], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "step,policy,idle_capacity,matched,deferred,migrated,migrated_value_cum,migrated_cycles_cum\n"
        );
    }

    #[test]
    fn csv_rows_render_policy_and_numbers() {
        let mut buf = Vec::new();
        write_csv(&csv_rows(&report(vec![sample(0, 0.1, 2.5)])), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "0,crl,0.1,1,0,0,2.5,5.0");
    }

    #[test]
    fn comparison_of_constructed_reports() {
        let a = report(vec![sample(0, 10.0, 1.0), sample(1, 4.0, 3.0)]);
        let b = report(vec![sample(0, 12.0, 1.0), sample(1, 3.0, 5.0)]);
        let c = compare_reports(&a, &b).unwrap();
        assert_eq!(c.idle_capacity_delta, [-2.0, 1.0]);
        assert_eq!(c.migrated_value_delta, [0.0, -2.0]);
        assert_eq!(c.migrated_cycles_delta, [0.0, -4.0]);
        assert_eq!(c.mean_idle_capacity_left, 7.0);
        assert_eq!(c.mean_idle_capacity_right, 7.5);
        assert_eq!(c.mean_idle_capacity_delta, -0.5);
        assert_eq!(c.idle_capacity_le_fraction, 0.5);
        assert_eq!(c.migrated_value_le_fraction, 1.0);

        let same = compare_reports(&a, &a).unwrap();
        assert!(same.idle_capacity_delta.iter().all(|&d| d == 0.0));
        assert!(same.migrated_value_delta.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn comparison_rejects_mismatched_lengths() {
        let a = report(vec![sample(0, 1.0, 0.0)]);
        let b = report(vec![]);
        assert!(matches!(
            compare_reports(&a, &b),
            Err(MetricsError::LengthMismatch { left: 1, right: 0 })
        ));
    }

    #[test]
    fn write_failure_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("missing").join("r.csv");
        let err = emit_report(&report(vec![]), ReportFormat::Csv, &path).unwrap_err();
        assert!(err.to_string().contains("missing"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_sample() -> impl Strategy<Value = StepSample> {
            (
                0u64..1000,
                prop_oneof![Just(Policy::Crl), Just(Policy::Cloud)],
                any::<f64>().prop_filter("finite", |x| x.is_finite()),
                0u64..100,
                0u64..100,
                0u64..100,
                0.0f64..1e12,
                0.0f64..1e300,
            )
                .prop_map(|(step, policy, idle, matched, deferred, migrated, v, c)| {
                    StepSample {
                        step,
                        policy,
                        arrived: 0,
                        idle_capacity: idle,
                        matched,
                        deferred,
                        migrated,
                        expired: 0,
                        migrated_value_cum: v,
                        migrated_cycles_cum: c,
                    }
                })
        }

        proptest! {
            #[test]
            fn csv_round_trip_is_exact_and_fixed_point(samples in prop::collection::vec(arb_sample(), 0..20)) {
                let rows = csv_rows(&report(samples));
                let mut first = Vec::new();
                write_csv(&rows, &mut first).unwrap();
                let parsed = parse_csv(first.as_slice()).unwrap();
                prop_assert_eq!(&parsed, &rows);
                let mut second = Vec::new();
                write_csv(&parsed, &mut second).unwrap();
                prop_assert_eq!(first, second);
            }

            #[test]
            fn comparison_deltas_negate_under_swap(
                xs in prop::collection::vec((0.0f64..1e6, 0.0f64..1e6), 0..30),
                ys in prop::collection::vec((0.0f64..1e6, 0.0f64..1e6), 0..30),
            ) {
                let n = xs.len().min(ys.len());
                let a = report(xs[..n].iter().enumerate().map(|(i, &(c, v))| sample(i as u64, c, v)).collect());
                let b = report(ys[..n].iter().enumerate().map(|(i, &(c, v))| sample(i as u64, c, v)).collect());
                let ab = compare_reports(&a, &b).unwrap();
                let ba = compare_reports(&b, &a).unwrap();
                for (x, y) in ab.idle_capacity_delta.iter().zip(&ba.idle_capacity_delta) {
                    prop_assert_eq!(*x, -*y);
                }
                for (x, y) in ab.migrated_value_delta.iter().zip(&ba.migrated_value_delta) {
                    prop_assert_eq!(*x, -*y);
                }
            }
        }
    }
}
