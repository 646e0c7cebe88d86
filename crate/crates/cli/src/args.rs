use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use quietbench_core::ScenarioLabel;
use quietbench_engine::{QueryId, Schema};

#[derive(Debug, Parser)]
#[command(name = "quietbench", version, about = "Measure, analyse and reduce per-tuple latency noise of a streaming query engine")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded input stream as CSV.
    Gen(GenArgs),
    /// Apply a scenario, run one measured trial, restore the system.
    Run(RunArgs),
    /// Run synthetic tenants alone and report their throughput.
    Load(LoadArgs),
    /// Compute noise statistics for one or more traces.
    Analyze(AnalyzeArgs),
    /// Render a latency time series or a spread chart as SVG.
    Plot(PlotArgs),
    /// Check the incremental engine against the batch oracle on every prefix.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct StreamArgs {
    /// Read the stream from CSV instead of generating it.
    #[arg(long, conflicts_with_all = ["base", "iterations"])]
    pub input: Option<PathBuf>,
    /// Distinct tuples per iteration.
    #[arg(long, default_value_t = 100)]
    pub base: usize,
    /// Times the base stream is replayed.
    #[arg(long, default_value_t = 1)]
    pub iterations: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_parser = parse_schema)]
    pub schema: Schema,
    #[arg(long)]
    pub base: usize,
    #[arg(long, default_value_t = 1)]
    pub iterations: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output file; stdout when absent.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClockChoice {
    /// Time-stamp counter (x86-64).
    Tsc,
    /// clock_gettime(CLOCK_MONOTONIC).
    Monotonic,
    /// Engine index-operation counter instead of time.
    Fake,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TenantSize {
    Default,
    Small,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_parser = parse_query)]
    pub query: QueryId,
    #[arg(long, value_parser = parse_scenario, default_value = "no-load")]
    pub scenario: ScenarioLabel,
    #[arg(long, value_enum, default_value_t = ClockChoice::Tsc)]
    pub clock: ClockChoice,
    #[command(flatten)]
    pub stream: StreamArgs,
    /// Tuples per timestamp pair.
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    /// Leading samples to discard.
    #[arg(long, default_value_t = 0)]
    pub drop_first: usize,
    /// Measurement CPU; defaults to the highest online CPU.
    #[arg(long)]
    pub cpu: Option<usize>,
    #[arg(long, default_value_t = quietbench_os::isolate::DEFAULT_FIFO_PRIORITY)]
    pub fifo_priority: i32,
    /// Read the counter without lfence serialization.
    #[arg(long)]
    pub no_fence: bool,
    #[arg(long, default_value_t = 200)]
    pub calibration_ms: u64,
    /// Tenant workloads, comma separated, or `all`.
    #[arg(long, default_value = "all")]
    pub tenants: String,
    /// CPUs for tenants (e.g. `0-2`); defaults to every CPU except the measurement CPU.
    #[arg(long)]
    pub tenant_cpus: Option<String>,
    #[arg(long, value_enum, default_value_t = TenantSize::Default)]
    pub tenant_size: TenantSize,
    /// Time tenants run before the trial starts.
    #[arg(long, default_value_t = 500)]
    pub warmup_ms: u64,
    /// Trace file.
    #[arg(short, long, default_value = "trace.silt")]
    pub output: PathBuf,
    /// Run report (JSON); defaults to the trace path with `.json` appended.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Print the OS writes the scenario would make, change nothing.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct LoadArgs {
    #[arg(long, default_value = "all")]
    pub workloads: String,
    /// CPUs to load, e.g. `1-3`; defaults to all online CPUs.
    #[arg(long)]
    pub cpus: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub duration_ms: u64,
    #[arg(long, value_enum, default_value_t = TenantSize::Default)]
    pub size: TenantSize,
    /// Report file; stdout when absent.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(required = true)]
    pub traces: Vec<PathBuf>,
    /// Sliding-mean window in samples.
    #[arg(long, default_value_t = 1000)]
    pub window: usize,
    /// Histogram bin width for band detection, in trace units; default median/50.
    #[arg(long)]
    pub bin_width: Option<u64>,
    #[arg(long, default_value_t = quietbench_core::analysis::DEFAULT_LOW_QUANTILE)]
    pub low: f64,
    #[arg(long, default_value_t = quietbench_core::analysis::DEFAULT_HIGH_QUANTILE)]
    pub high: f64,
    /// Tenant reports as `label=path.json`, for throughput impact.
    #[arg(long = "tenants")]
    pub tenant_reports: Vec<String>,
    /// Summary file; stdout when absent.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(required = true)]
    pub traces: Vec<PathBuf>,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Paired spread bars for all traces instead of a time series.
    #[arg(long)]
    pub spreads: bool,
    #[arg(long, default_value_t = 1000)]
    pub window: usize,
    /// Most normal points drawn; extremes are always drawn.
    #[arg(long, default_value_t = 50_000)]
    pub downsample: usize,
    /// Also write `index,delta,class` rows.
    #[arg(long)]
    pub points_csv: Option<PathBuf>,
    #[arg(long)]
    pub title: Option<String>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, value_parser = parse_query)]
    pub query: QueryId,
    #[arg(long, default_value_t = 1000)]
    pub events: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Use the adversarial stream generator (duplicates, boundary values).
    #[arg(long)]
    pub adversarial: bool,
    /// Verify a CSV stream instead.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, hide = true)]
    pub inject_fault_at: Option<u64>,
}

fn parse_query(s: &str) -> Result<QueryId, String> {
    s.parse().map_err(|e: quietbench_engine::EngineError| e.to_string())
}

fn parse_schema(s: &str) -> Result<Schema, String> {
    s.parse().map_err(|e: quietbench_engine::EngineError| e.to_string())
}

fn parse_scenario(s: &str) -> Result<ScenarioLabel, String> {
    s.parse()
}
