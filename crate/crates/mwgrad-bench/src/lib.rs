//! Shared fixtures for the benchmark targets.

use mwgrad::{
    four_mixture_targets, init_particles, EnergyObjective, Method, Objective, ParticleSet,
    RunConfig,
};

/// The synthetic four-target setup at its published size.
pub fn energy_setup(method: Method) -> (RunConfig, Vec<Objective>, ParticleSet) {
    let config = RunConfig {
        method,
        seed: 11,
        ..RunConfig::default()
    };
    let objectives = four_mixture_targets()
        .into_iter()
        .map(|t| Objective::Energy(EnergyObjective::new(t)))
        .collect();
    let particles = init_particles(&config);
    (config, objectives, particles)
}
