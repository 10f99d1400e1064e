//! Library surface of the experiment runner; the `mwgrad` binary is a thin
//! wrapper over [`experiment`].

pub mod experiment;

pub use experiment::{
    apply_overrides, compare_methods, config_to_value, load_config, mean_distance_to_origin,
    run_experiment, CliError, CliResult, ErrorKind, ExperimentConfig, MethodSummary, MixtureSpec,
    ObjectiveSpec, PRESETS,
};
