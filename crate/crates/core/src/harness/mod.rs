//! Experiment orchestration: bias/variance campaigns, inner-loop
//! diagnostics, rate fitting, run configs and the command-line interface.

mod bias;
pub mod cli;
mod experiment;
mod fit;
mod inner;
mod output;

pub use bias::{
    measure_bias_variance, BiasCampaign, BiasRow, BiasVarianceReport, CampaignMode, EstimatorKind,
    MIN_MONTECARLO_REPLICATIONS,
};
pub use experiment::{
    execute_run, resolve_schedule, run_experiment, try_reference, Algorithm, ExperimentOutcome, ExperimentReport,
    RunConfig, RunOverrides, ScheduleConfig, TheoremBlock, DEFAULT_REFERENCE_GRID,
};
pub use fit::{fit_loglog_slope, SlopeFit};
pub use inner::{measure_inner_loop, InnerLoopCampaign, InnerLoopDiagnostics};
pub use output::{csv_table, json_pretty, write_atomic};
