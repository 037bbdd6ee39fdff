//! Synthetic scenario generator, toy target model and experiment runner.

pub mod experiment;
pub mod synth;
pub mod target;

pub use experiment::{run_experiment, run_seed, ExperimentConfig, ExperimentOutcome};
pub use synth::{generate, ClusterRole, ClusterSpec, Sample, Split, SyntheticData, SyntheticSpec};
pub use target::{build_pools, fit_target, HarnessPools, TargetConfig, ToyTargetModel};
