//! Multiple Wasserstein gradient descent: an iterative particle algorithm
//! that minimizes several functionals over probability distributions at
//! once.
//!
//! Each iteration estimates a velocity field per objective at the current
//! particles (kernelized estimators for closed-form energy targets, trained
//! variational critics for sample-only targets), aggregates the fields with
//! simplex weights driven by a projected-gradient update on the velocity
//! Gram matrix, and moves the particles along the aggregate. See
//! [`optimizer::run`] for the loop and the `mwgrad` binary for the
//! experiment runner.

pub mod aggregate;
pub mod config;
pub mod error;
pub mod kernel;
pub mod linalg;
pub mod mixture;
pub mod nn;
pub mod objectives;
pub mod optimizer;
pub mod particles;
pub mod rng;
pub mod trace;
pub mod velocity;
pub mod weights;

pub use aggregate::{
    aggregate_velocity, gram_matrix, min_norm_exact, pareto_stationarity, project_simplex,
    update_weights, GramMatrix,
};
pub use config::{BandwidthRule, Method, NnSettings, Normalization, RunConfig};
pub use error::{Error, Result};
pub use kernel::RbfKernel;
pub use mixture::{GaussianComponent, GaussianMixture};
pub use nn::{train_variational, variational_objective, Mlp, OutputActivation, VariationalSpec};
pub use objectives::{
    draw_target_samples, four_mixture_targets, Divergence, EnergyObjective, Objective,
    SampleObjective,
};
pub use optimizer::{
    gradient_error, init_state, moo_svgd_step, mt_sgd_step, mwgrad_step, run, OptimizerState,
    RunOutput,
};
pub use particles::{init_particles, ParticleSet};
pub use trace::TraceRecord;
pub use velocity::{blob_velocity, nn_velocity, svgd_velocity, VelocityBundle};
pub use weights::{init_weights, SimplexWeights};
