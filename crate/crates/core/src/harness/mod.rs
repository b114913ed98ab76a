//! Experiment configuration, chain diagnostics and the run/sweep drivers
//! behind the command-line tool.

mod config;
mod diagnostics;
mod experiment;

pub use config::{BetaSetting, MergeRadius, ModelId, RunConfig, SamplerKind, KEYS};
pub use diagnostics::{
    autocovariance, batch_means_se, diagnose_trace, ess, ks_two_sample, summarize, tree_stats_key_values,
    Diagnostics, MIN_ESS_LENGTH,
};
pub use experiment::{
    benchmark_gaussian, build_target, default_lambda, load_dataset, pilot_from_config, run_experiment, run_pilot, run_with_pilot,
    simulate_dataset, sweep, AnyTarget, PilotArtifacts, Resolved, RunOutput, SweepGrid,
};
