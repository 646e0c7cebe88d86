//! OS-facing parts of quietbench: isolation scenarios and synthetic tenants.

pub mod backend;
pub mod cpulist;
pub mod isolate;
pub mod load;
mod workloads;

pub use backend::{current_tid, DryRunOs, FakeOs, LinuxOs, Os, OsWrite, SchedParams, SchedPolicy};
pub use cpulist::CpuList;
pub use isolate::{
    apply_scenario, teardown, verify_scenario, AppliedScenario, Feature, FeatureStatus, IsolateError, OsSnapshot,
    ScenarioSpec, VerificationReport,
};
pub use load::{start_tenants, LoadError, LoadParams, TenantHandle};
