//! Closed-loop simulation over session traces, the uncontrolled baseline,
//! feasibility sweeps and comparison reports.

pub mod config;
pub mod engine;
pub mod metrics;
pub mod output;
pub mod report;
pub mod sweep;

pub use config::{ForcedRate, SimConfig, SyntheticSpec};
pub use engine::{
    baseline_status_quo, run, run_with, truths, EvTruth, PlanSnapshot, RunAbort, RunOptions, RunOutput,
    SlotRecord, StepTiming,
};
pub use metrics::{DayLoad, Ratios, SimulationMetrics, MIDDAY_SLOTS};
pub use report::{report, ReportRow};
pub use sweep::{sweep_feasibility, GridPoint};
