//! Trial enumeration, threshold calibration, rates and the session protocols.

mod metrics;
mod protocol;
mod trials;

pub use metrics::{
    calibrate_threshold, compute_rates, impostor_budget, roc_curve, Counts, RocCurve, RocPoint, Threshold,
};
pub use protocol::{evaluate_experiment, run_protocol, EvalReport, ExperimentReport, GroupStats};
pub use trials::{
    build_trials, enumerate_experiments, pairwise_distances, protocol_records, AgeGroup, Protocol, ScoreSet, Trial,
    AGE_SPLIT_YEARS,
};
