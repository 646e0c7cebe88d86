//! Measurement side of quietbench: clocks, the trial harness, latency traces,
//! noise statistics and chart rendering.

pub mod analysis;
pub mod clock;
pub mod harness;
pub mod report;
pub mod scenario;
pub mod tenant;
pub mod trace;

pub use analysis::{
    classify_outliers, compare_scenarios, detect_bands, sliding_mean, spreads, tenant_impact, AnalysisError,
    Band, ComparisonTable, ImpactTable, OutlierClassification, PointClass, SpreadSummary,
};
pub use clock::{Calibration, Clock, ClockError, ClockKind, CycleCounter, FakeClock, MonotonicClock};
pub use harness::{run_trial, HarnessError, Trial, TrialOutcome, TrialSpec};
pub use report::{render_spread_chart, render_timeseries, write_json, write_points_csv, PlotSpec, ReportError};
pub use scenario::ScenarioLabel;
pub use tenant::{CellStatus, TenantCell, TenantReport, WorkloadKind};
pub use trace::{export_csv, export_trace, import_trace, LatencyTrace, TraceError};
