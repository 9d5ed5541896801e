//! The `crl` command line.
//!
//! Exit codes: 0 on success, 2 for usage, configuration and validation
//! errors, 1 when output cannot be written.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::metrics::{compare_reports, emit_report, Policy, ReportFormat, SimReport};
use crate::simulator::{run_batch, SimConfig};

#[derive(Debug, Parser)]
#[command(
    name = "crl",
    version,
    about = "Priority-based computation resource leasing simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one policy and write its report.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Handling policy.
        #[arg(long)]
        policy: Option<Policy>,
    },
    /// Run leasing and cloud offloading on one seed and compare them.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run leasing once per retry budget W on a shared seed.
    #[command(name = "sweep-w")]
    SweepW {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated retry budgets.
        #[arg(long, value_delimiter = ',', required = true)]
        w_values: Vec<u32>,
    },
}

/// Flags shared by every subcommand. Each one overrides the matching field
/// of the scenario file.
#[derive(Debug, Args)]
struct CommonArgs {
    /// Scenario file (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scenario name used in output file names [default: config file stem or "default"].
    #[arg(long)]
    scenario: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Report format.
    #[arg(long, default_value = "csv")]
    format: ReportFormat,

    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    step_seconds: Option<f64>,
    #[arg(long)]
    initial_priority: Option<f64>,

    #[arg(long)]
    gamma_t: Option<f64>,
    #[arg(long)]
    gamma_p: Option<f64>,
    #[arg(long)]
    gamma_n: Option<f64>,
    #[arg(long)]
    gamma_m: Option<f64>,
    #[arg(long)]
    conversion_rate: Option<f64>,
    /// Retry budget W.
    #[arg(long)]
    max_rounds: Option<u32>,
    #[arg(long)]
    tau: Option<f64>,

    #[arg(long)]
    task_rate: Option<f64>,
    #[arg(long)]
    source_rate: Option<f64>,
    #[arg(long)]
    cycles_min: Option<f64>,
    #[arg(long)]
    cycles_max: Option<f64>,
    #[arg(long)]
    value_min: Option<f64>,
    #[arg(long)]
    value_max: Option<f64>,
    #[arg(long)]
    deadline_min: Option<f64>,
    #[arg(long)]
    deadline_max: Option<f64>,
    #[arg(long)]
    idle_min: Option<f64>,
    #[arg(long)]
    idle_max: Option<f64>,
    #[arg(long)]
    cps_min: Option<f64>,
    #[arg(long)]
    cps_max: Option<f64>,
    #[arg(long)]
    device_count: Option<u64>,
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Output(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Output(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Output(m) => m,
        }
    }
}

fn output_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Output(format!("cannot write {}: {e}", path.display()))
}

/// Parses a scenario file. Missing keys take their defaults; unknown keys are
/// an error.
pub fn parse_scenario(text: &str) -> Result<SimConfig, serde_json::Error> {
    serde_json::from_str(text)
}

fn load_scenario(path: &Path) -> Result<SimConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| {
        CliError::Config(format!(
            "cannot read config {}: {e}\n\nUsage: crl <run|compare|sweep-w> --config PATH [OPTIONS]",
            path.display()
        ))
    })?;
    parse_scenario(&text)
        .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))
}

fn set<T: Copy>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

impl CommonArgs {
    fn resolve(&self) -> Result<(String, SimConfig), CliError> {
        let mut config = match &self.config {
            Some(path) => load_scenario(path)?,
            None => SimConfig::default(),
        };
        set(&mut config.rng_seed, self.seed);
        set(&mut config.steps, self.steps);
        set(&mut config.step_seconds, self.step_seconds);
        set(&mut config.initial_priority, self.initial_priority);

        let w = &mut config.weights;
        set(&mut w.gamma_t, self.gamma_t);
        set(&mut w.gamma_p, self.gamma_p);
        set(&mut w.gamma_n, self.gamma_n);
        set(&mut w.gamma_m, self.gamma_m);
        set(&mut w.conversion_rate_r, self.conversion_rate);
        set(&mut w.max_rounds_w, self.max_rounds);
        set(&mut w.tau_s, self.tau);

        let wl = &mut config.workload;
        set(&mut wl.task_arrival_rate, self.task_rate);
        set(&mut wl.source_arrival_rate, self.source_rate);
        set(&mut wl.cycles_required.min, self.cycles_min);
        set(&mut wl.cycles_required.max, self.cycles_max);
        set(&mut wl.value.min, self.value_min);
        set(&mut wl.value.max, self.value_max);
        set(&mut wl.deadline_s.min, self.deadline_min);
        set(&mut wl.deadline_s.max, self.deadline_max);
        set(&mut wl.idle_seconds.min, self.idle_min);
        set(&mut wl.idle_seconds.max, self.idle_max);
        set(&mut wl.cycles_per_second.min, self.cps_min);
        set(&mut wl.cycles_per_second.max, self.cps_max);
        set(&mut wl.device_count, self.device_count);

        config
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;

        let scenario = self
            .scenario
            .clone()
            .or_else(|| {
                self.config
                    .as_ref()
                    .and_then(|p| p.file_stem())
                    .map(|s| s.to_string_lossy().into_owned())
            })
            .unwrap_or_else(|| "default".to_string());
        Ok((scenario, config))
    }
}

/// `<scenario>_<policy>_seed<seed>.<ext>`
pub fn report_file_name(scenario: &str, policy: Policy, seed: u64, format: ReportFormat) -> String {
    format!("{scenario}_{policy}_seed{seed}.{}", format.extension())
}

fn prepare_out_dir(out: &Path, config: &SimConfig) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| output_err(out, e))?;
    write_json(&out.join("effective_config.json"), config)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| output_err(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| output_err(path, e))
}

fn write_report(
    out: &Path,
    scenario: &str,
    report: &SimReport,
    format: ReportFormat,
) -> Result<PathBuf, CliError> {
    let path = out.join(report_file_name(
        scenario,
        report.policy,
        report.seed,
        format,
    ));
    emit_report(report, format, &path).map_err(|e| CliError::Output(e.to_string()))?;
    Ok(path)
}

fn mean_idle(report: &SimReport) -> f64 {
    if report.samples.is_empty() {
        return 0.0;
    }
    report.samples.iter().map(|s| s.idle_capacity).sum::<f64>() / report.samples.len() as f64
}

fn summarize(stdout: &mut dyn Write, label: &str, report: &SimReport) -> io::Result<()> {
    let t = &report.totals;
    writeln!(
        stdout,
        "{label:<12} steps={:<5} arrived={:<6} matched={:<6} migrated={:<6} (expired {}) pending={:<4} mean_idle={:.3} migrated_value={:.3}",
        report.samples.len(),
        t.arrived_tasks,
        t.matched,
        t.migrated,
        t.expired,
        t.pending,
        mean_idle(report),
        report.final_migrated_value(),
    )
}

fn run_reports(configs: &[SimConfig]) -> Result<Vec<SimReport>, CliError> {
    run_batch(configs)
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Config(e.to_string()))
}

#[derive(Serialize)]
struct SweepRow {
    w: u32,
    matched: u64,
    migrated: u64,
    pending: u64,
    final_migrated_value_cum: f64,
    final_migrated_cycles_cum: f64,
}

fn execute(command: Command, stdout: &mut dyn Write) -> Result<(), CliError> {
    let console = |e: io::Error| CliError::Output(format!("cannot write to stdout: {e}"));
    match command {
        Command::Run { common, policy } => {
            let (scenario, mut config) = common.resolve()?;
            set(&mut config.policy, policy);
            prepare_out_dir(&common.out, &config)?;
            let report = run_reports(std::slice::from_ref(&config))?.remove(0);
            let path = write_report(&common.out, &scenario, &report, common.format)?;
            summarize(stdout, config.policy.as_str(), &report).map_err(console)?;
            writeln!(stdout, "wrote {}", path.display()).map_err(console)?;
        }
        Command::Compare { common } => {
            let (scenario, config) = common.resolve()?;
            prepare_out_dir(&common.out, &config)?;
            let configs: Vec<SimConfig> = [Policy::Crl, Policy::Cloud]
                .into_iter()
                .map(|policy| SimConfig {
                    policy,
                    ..config.clone()
                })
                .collect();
            let reports = run_reports(&configs)?;
            for report in &reports {
                write_report(&common.out, &scenario, report, common.format)?;
                summarize(stdout, report.policy.as_str(), report).map_err(console)?;
            }
            let summary = compare_reports(&reports[0], &reports[1])
                .map_err(|e| CliError::Output(e.to_string()))?;
            let path = common
                .out
                .join(format!("{scenario}_compare_seed{}.json", config.rng_seed));
            write_json(&path, &summary)?;
            writeln!(
                stdout,
                "crl-cloud: mean idle delta {:.3}, final migrated value delta {:.3}, idle<= on {:.1}% of steps, migrated<= on {:.1}% of steps",
                summary.mean_idle_capacity_delta,
                summary.migrated_value_delta.last().copied().unwrap_or(0.0),
                100.0 * summary.idle_capacity_le_fraction,
                100.0 * summary.migrated_value_le_fraction,
            )
            .map_err(console)?;
            writeln!(stdout, "wrote {}", path.display()).map_err(console)?;
        }
        Command::SweepW { common, w_values } => {
            let (scenario, config) = common.resolve()?;
            prepare_out_dir(&common.out, &config)?;
            let configs: Vec<SimConfig> = w_values
                .iter()
                .map(|&w| {
                    let mut c = SimConfig {
                        policy: Policy::Crl,
                        ..config.clone()
                    };
                    c.weights.max_rounds_w = w;
                    c
                })
                .collect();
            for c in &configs {
                c.validate().map_err(|e| CliError::Config(e.to_string()))?;
            }
            let reports = run_reports(&configs)?;
            let mut rows = Vec::with_capacity(reports.len());
            for (&w, report) in w_values.iter().zip(&reports) {
                write_report(
                    &common.out,
                    &format!("{scenario}-w{w}"),
                    report,
                    common.format,
                )?;
                summarize(stdout, &format!("crl w={w}"), report).map_err(console)?;
                rows.push(SweepRow {
                    w,
                    matched: report.totals.matched,
                    migrated: report.totals.migrated,
                    pending: report.totals.pending,
                    final_migrated_value_cum: report.final_migrated_value(),
                    final_migrated_cycles_cum: report
                        .samples
                        .last()
                        .map_or(0.0, |s| s.migrated_cycles_cum),
                });
            }
            let path = common
                .out
                .join(format!("{scenario}_sweep-w_seed{}.csv", config.rng_seed));
            let mut writer = csv::Writer::from_path(&path).map_err(|e| output_err(&path, e))?;
            for row in &rows {
                writer.serialize(row).map_err(|e| output_err(&path, e))?;
            }
            writer.flush().map_err(|e| output_err(&path, e))?;
            writeln!(stdout, "wrote {}", path.display()).map_err(console)?;
        }
    }
    Ok(())
}

/// Runs the CLI with explicit arguments (the first one is the program name)
/// and returns the process exit code.
pub fn run_cli<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{}", e.render());
                return 2;
            }
            let _ = write!(stdout, "{}", e.render());
            return 0;
        }
    };
    match execute(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message());
            e.exit_code()
        }
    }
}

/// Entry point of the `crl` binary.
pub fn main() -> i32 {
    run_cli(
        std::env::args_os(),
        &mut io::stdout().lock(),
        &mut io::stderr().lock(),
    )
}

impl clap::ValueEnum for Policy {
    fn value_variants<'a>() -> &'a [Self] {
        &[Policy::Crl, Policy::Cloud]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.as_str()))
    }
}

impl clap::ValueEnum for ReportFormat {
    fn value_variants<'a>() -> &'a [Self] {
        &[ReportFormat::Csv, ReportFormat::Json]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.extension()))
    }
}
