//! The outer optimization loop: per-objective velocity estimation, weight
//! dynamics, particle updates and per-iteration diagnostics.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::aggregate::{
    aggregate_velocity, gram_matrix, min_norm_exact, update_weights, GramMatrix,
};
use crate::config::{BandwidthRule, Method, RunConfig};
use crate::error::{Error, Result};
use crate::kernel::RbfKernel;
use crate::nn::{train_variational, Mlp, VariationalSpec};
use crate::objectives::{Divergence, EnergyObjective, Objective};
use crate::particles::{init_particles, ParticleSet};
use crate::rng;
use crate::trace::TraceRecord;
use crate::velocity::{blob_velocity, nn_velocity, svgd_velocity, VelocityBundle};
use crate::weights::{init_weights, SimplexWeights};

/// Abort when any particle coordinate grows past this magnitude.
const DIVERGENCE_GUARD: f64 = 1e6;

/// Immutable state of the optimizer between iterations. Steps consume a
/// reference and return a fresh state, so traces can be replayed and
/// bisected.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub particles: ParticleSet,
    pub weights: SimplexWeights,
    pub iter: usize,
    /// One critic per objective; present only for the critic-based method
    /// and warm-started across iterations.
    pub nn_params: Option<Vec<Mlp>>,
}

/// Trace, periodic particle snapshots and the final state of a run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Vec<TraceRecord>,
    pub snapshots: Vec<(usize, ParticleSet)>,
    pub final_state: OptimizerState,
}

/// Checks that the objective list is compatible with the configuration and
/// the chosen method.
fn validate_objectives(config: &RunConfig, objectives: &[Objective]) -> Result<()> {
    if objectives.len() != config.num_objectives {
        return Err(Error::invalid(format!(
            "config declares {} objectives but {} were supplied",
            config.num_objectives,
            objectives.len()
        )));
    }
    for (k, o) in objectives.iter().enumerate() {
        if o.dim() != config.dim {
            return Err(Error::invalid(format!(
                "objective {k} has dimension {}, config expects {}",
                o.dim(),
                config.dim
            )));
        }
    }
    let kernel_based = matches!(
        config.method,
        Method::MwgradSvgd | Method::MwgradBlob | Method::MooSvgd | Method::MtSgd
    );
    if kernel_based && objectives.iter().any(|o| o.as_energy().is_none()) {
        return Err(Error::invalid(format!(
            "method {} needs closed-form energy objectives; use mwgrad-nn for sample targets",
            config.method
        )));
    }
    Ok(())
}

/// Initial state: standard-normal particles, uniform weights and freshly
/// initialized critics when the method needs them.
pub fn init_state(config: &RunConfig, objectives: &[Objective]) -> Result<OptimizerState> {
    config.validate()?;
    validate_objectives(config, objectives)?;
    let particles = init_particles(config);
    let weights = init_weights(config.num_objectives)?;
    let nn_params = if config.method == Method::MwgradNn {
        let mut nets = Vec::with_capacity(objectives.len());
        for (k, o) in objectives.iter().enumerate() {
            let spec = variational_spec(o);
            let mut gen = rng::substream(config.seed, "nn-init", k, 0);
            nets.push(Mlp::init(
                config.dim,
                &config.nn.hidden,
                spec.output_activation(),
                &mut gen,
            )?);
        }
        Some(nets)
    } else {
        None
    };
    Ok(OptimizerState {
        particles,
        weights,
        iter: 0,
        nn_params,
    })
}

fn variational_spec(objective: &Objective) -> VariationalSpec {
    match objective {
        Objective::Energy(o) => VariationalSpec::KlEnergy {
            target: o.target().clone(),
        },
        Objective::Samples(o) => match o.divergence() {
            Divergence::Kl => VariationalSpec::KlSample,
            Divergence::Js => VariationalSpec::Js,
        },
    }
}

fn step_kernel(config: &RunConfig, particles: &ParticleSet) -> Result<RbfKernel> {
    let base = RbfKernel::new(config.kernel_gamma)?;
    Ok(match config.bandwidth {
        BandwidthRule::Fixed => base,
        BandwidthRule::Median => base.with_median_bandwidth(particles.matrix()),
    })
}

/// Estimates the per-objective velocity bundle for the configured method.
/// For the critic-based method this trains each critic first; the trained
/// critics are returned so the caller can carry them into the next state.
fn estimate_bundle(
    state: &OptimizerState,
    objectives: &[Objective],
    config: &RunConfig,
) -> Result<(VelocityBundle, Option<Vec<Mlp>>)> {
    let kernel = step_kernel(config, &state.particles)?;
    match config.method {
        Method::MwgradSvgd | Method::MooSvgd | Method::MtSgd => {
            let slices = objectives
                .iter()
                .map(|o| {
                    svgd_velocity(
                        &state.particles,
                        o.as_energy().expect("validated energy objective"),
                        &kernel,
                        config.svgd_normalization,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((VelocityBundle::from_slices(slices, &state.particles)?, None))
        }
        Method::MwgradBlob => {
            let slices = objectives
                .iter()
                .map(|o| {
                    blob_velocity(
                        &state.particles,
                        o.as_energy().expect("validated energy objective"),
                        &kernel,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((VelocityBundle::from_slices(slices, &state.particles)?, None))
        }
        Method::MwgradNn => {
            let mut nets = state
                .nn_params
                .clone()
                .ok_or_else(|| Error::invalid("critic parameters missing for mwgrad-nn"))?;
            let mut slices = Vec::with_capacity(objectives.len());
            for (k, objective) in objectives.iter().enumerate() {
                let spec = variational_spec(objective);
                let reference = reference_samples(objective, config, k, state.iter as u64);
                train_variational(
                    &mut nets[k],
                    &spec,
                    state.particles.matrix(),
                    reference.view(),
                    config.nn.train_steps,
                    config.nn.train_step_size,
                )?;
                slices.push(nn_velocity(&nets[k], &state.particles, &spec)?);
            }
            Ok((
                VelocityBundle::from_slices(slices, &state.particles)?,
                Some(nets),
            ))
        }
    }
}

/// Reference samples for one critic: the target's own samples, or fresh
/// standard-normal draws when the target is an energy objective.
fn reference_samples(
    objective: &Objective,
    config: &RunConfig,
    k: usize,
    iteration: u64,
) -> Array2<f64> {
    match objective {
        Objective::Samples(o) => o.samples().to_owned(),
        Objective::Energy(_) => {
            let mut gen = rng::substream(config.seed, "nn-ref", k, iteration);
            Array2::from_shape_fn((config.nn.reference_samples, config.dim), |_| {
                gen.sample::<f64, _>(StandardNormal)
            })
        }
    }
}

fn move_particles(
    particles: &ParticleSet,
    velocity: ArrayView2<f64>,
    alpha: f64,
    iteration: usize,
) -> Result<ParticleSet> {
    let mut data = particles.matrix().to_owned();
    for (i, mut row) in data.rows_mut().into_iter().enumerate() {
        for (c, x) in row.iter_mut().enumerate() {
            *x -= alpha * velocity[[i, c]];
            if !x.is_finite() || x.abs() > DIVERGENCE_GUARD {
                return Err(Error::Diverged {
                    iteration,
                    particle: i,
                });
            }
        }
    }
    ParticleSet::new(data)
}

/// Upper bound on min_w w^T G w used for traces: the solver value capped by
/// the value at the weights in hand (both are feasible upper bounds). A
/// capped solve still yields its best iterate.
fn stationarity_estimate(g: &GramMatrix, fallback_value: f64) -> f64 {
    let solved = match min_norm_exact(g, 1e-10) {
        Ok(w) => g.quadratic_form(w.as_slice()),
        Err(Error::MinNormDidNotConverge { value, .. }) => value,
        Err(_) => f64::INFINITY,
    };
    solved.min(fallback_value).max(0.0)
}

fn per_objective_values(
    objectives: &[Objective],
    particles: &ParticleSet,
    config: &RunConfig,
) -> Result<Vec<Option<f64>>> {
    let kernel = RbfKernel::new(config.kernel_gamma)?;
    Ok(objectives
        .iter()
        .map(|o| match o {
            Objective::Energy(e) => Some(e.estimate_value(particles, &kernel)),
            Objective::Samples(_) => None,
        })
        .collect())
}

/// One iteration in the printed order: estimate velocities, aggregate with
/// the current weights, move the particles, then take one projected-gradient
/// step on the weights using the pre-move velocities.
pub fn mwgrad_step(
    state: &OptimizerState,
    objectives: &[Objective],
    config: &RunConfig,
) -> Result<(OptimizerState, TraceRecord)> {
    let (bundle, trained) = estimate_bundle(state, objectives, config)?;
    let velocity = aggregate_velocity(&bundle, &state.weights)?;
    let particles = move_particles(
        &state.particles,
        velocity.view(),
        config.step_size_alpha,
        state.iter,
    )?;
    let gram = gram_matrix(&bundle, config.gram_normalization)?;
    let grad_norm_sq = gram.quadratic_form(state.weights.as_slice()).max(0.0);
    let stationarity = stationarity_estimate(&gram, grad_norm_sq);
    let next_weights = update_weights(&state.weights, &gram, config.step_size_beta)?;
    let record = TraceRecord::new(
        state.iter,
        state.weights.as_slice().to_vec(),
        stationarity,
        grad_norm_sq,
        per_objective_values(objectives, &state.particles, config)?,
    )?;
    Ok((
        OptimizerState {
            particles,
            weights: next_weights,
            iter: state.iter + 1,
            nn_params: trained.or_else(|| state.nn_params.clone()),
        },
        record,
    ))
}

/// Like [`mwgrad_step`] with kernelized velocities, but the weights are set
/// to the exact min-norm solution each iteration instead of one gradient
/// step.
pub fn mt_sgd_step(
    state: &OptimizerState,
    objectives: &[Objective],
    config: &RunConfig,
) -> Result<(OptimizerState, TraceRecord)> {
    let (bundle, _) = estimate_bundle(state, objectives, config)?;
    let gram = gram_matrix(&bundle, config.gram_normalization)?;
    let weights = min_norm_exact(&gram, 1e-10)?;
    let velocity = aggregate_velocity(&bundle, &weights)?;
    let particles = move_particles(
        &state.particles,
        velocity.view(),
        config.step_size_alpha,
        state.iter,
    )?;
    // The solved weights are the minimizer, so the stationarity value and
    // the gradient norm coincide here.
    let grad_norm_sq = gram.quadratic_form(weights.as_slice()).max(0.0);
    let record = TraceRecord::new(
        state.iter,
        weights.as_slice().to_vec(),
        grad_norm_sq,
        grad_norm_sq,
        per_objective_values(objectives, &state.particles, config)?,
    )?;
    Ok((
        OptimizerState {
            particles,
            weights,
            iter: state.iter + 1,
            nn_params: None,
        },
        record,
    ))
}

/// Per-particle min-norm weights for a velocity bundle: w_i minimizes
/// w^T G_i w with G_i[k][l] = <v_k(x_i), v_l(x_i)>.
pub fn moo_particle_weights(bundle: &VelocityBundle) -> Result<Vec<SimplexWeights>> {
    let k = bundle.num_objectives();
    let mut out = Vec::with_capacity(bundle.num_particles());
    for i in 0..bundle.num_particles() {
        let mut g = Array2::<f64>::zeros((k, k));
        for a in 0..k {
            let va = bundle.objective(a);
            for b in a..k {
                let vb = bundle.objective(b);
                let dot: f64 = (0..bundle.dim()).map(|c| va[[i, c]] * vb[[i, c]]).sum();
                g[[a, b]] = dot;
                g[[b, a]] = dot;
            }
        }
        out.push(min_norm_exact(&GramMatrix::new(g)?, 1e-10)?);
    }
    Ok(out)
}

/// Applies the per-particle conflict-avoidant update to a bundle: each
/// particle moves along its own min-norm combination of the objective
/// velocities. Returns the moved particles and the per-particle weights.
pub fn moo_update_from_bundle(
    particles: &ParticleSet,
    bundle: &VelocityBundle,
    alpha: f64,
    iteration: usize,
) -> Result<(ParticleSet, Vec<SimplexWeights>)> {
    let weights = moo_particle_weights(bundle)?;
    let mut data = particles.matrix().to_owned();
    for (i, w) in weights.iter().enumerate() {
        for c in 0..particles.dim() {
            let mut v = 0.0;
            for k in 0..bundle.num_objectives() {
                v += w[k] * bundle.objective(k)[[i, c]];
            }
            let x = &mut data[[i, c]];
            *x -= alpha * v;
            if !x.is_finite() || x.abs() > DIVERGENCE_GUARD {
                return Err(Error::Diverged {
                    iteration,
                    particle: i,
                });
            }
        }
    }
    Ok((ParticleSet::new(data)?, weights))
}

/// Per-particle baseline: every particle independently solves its own
/// min-norm problem over the kernelized velocities and moves along the
/// resulting combination. Trace weights are the mean of the per-particle
/// solutions.
pub fn moo_svgd_step(
    state: &OptimizerState,
    objectives: &[Objective],
    config: &RunConfig,
) -> Result<(OptimizerState, TraceRecord)> {
    let (bundle, _) = estimate_bundle(state, objectives, config)?;
    let (particles, particle_weights) = moo_update_from_bundle(
        &state.particles,
        &bundle,
        config.step_size_alpha,
        state.iter,
    )?;
    let k = bundle.num_objectives();
    let m = particle_weights.len() as f64;
    let mut mean = vec![0.0; k];
    for w in &particle_weights {
        for (acc, v) in mean.iter_mut().zip(w.as_slice()) {
            *acc += v / m;
        }
    }
    let mean = crate::aggregate::project_simplex(&mean)?;
    let gram = gram_matrix(&bundle, config.gram_normalization)?;
    let grad_norm_sq = gram.quadratic_form(mean.as_slice()).max(0.0);
    let stationarity = stationarity_estimate(&gram, grad_norm_sq);
    let record = TraceRecord::new(
        state.iter,
        mean.as_slice().to_vec(),
        stationarity,
        grad_norm_sq,
        per_objective_values(objectives, &state.particles, config)?,
    )?;
    Ok((
        OptimizerState {
            particles,
            weights: mean,
            iter: state.iter + 1,
            nn_params: None,
        },
        record,
    ))
}

/// One step of the configured method.
pub fn step(
    state: &OptimizerState,
    objectives: &[Objective],
    config: &RunConfig,
) -> Result<(OptimizerState, TraceRecord)> {
    match config.method {
        Method::MwgradSvgd | Method::MwgradBlob | Method::MwgradNn => {
            mwgrad_step(state, objectives, config)
        }
        Method::MtSgd => mt_sgd_step(state, objectives, config),
        Method::MooSvgd => moo_svgd_step(state, objectives, config),
    }
}

/// Runs the configured method for the configured number of iterations,
/// returning every trace record, particle snapshots at the snapshot cadence
/// (plus iteration zero and the final iteration) and the final state.
pub fn run(config: &RunConfig, objectives: &[Objective]) -> Result<RunOutput> {
    let mut state = init_state(config, objectives)?;
    let mut trace = Vec::with_capacity(config.num_iterations);
    let mut snapshots = vec![(0usize, state.particles.clone())];
    for _ in 0..config.num_iterations {
        let (next, record) = step(&state, objectives, config)?;
        trace.push(record);
        if next.iter % config.snapshot_every == 0 || next.iter == config.num_iterations {
            if snapshots.last().map(|(i, _)| *i) != Some(next.iter) {
                snapshots.push((next.iter, next.particles.clone()));
            }
        }
        state = next;
    }
    Ok(RunOutput {
        trace,
        snapshots,
        final_state: state,
    })
}

/// Mean squared deviation between an estimated velocity field and the
/// smoothed reference field grad g + grad log q_hat, with q_hat the kernel
/// density estimate of the particles. A diagnostic for low-dimensional
/// synthetic targets.
pub fn gradient_error(
    estimated: ArrayView2<f64>,
    particles: &ParticleSet,
    objective: &EnergyObjective,
    kernel: &RbfKernel,
) -> Result<f64> {
    if particles.dim() > 2 {
        return Err(Error::invalid(
            "the gradient-error probe supports d <= 2 only",
        ));
    }
    if estimated.nrows() != particles.len() || estimated.ncols() != particles.dim() {
        return Err(Error::invalid("estimated field shape mismatch"));
    }
    let x = particles.matrix();
    let m = particles.len();
    let gram = kernel.gram(x);
    let two_gamma = 2.0 * kernel.gamma();
    let mut total = 0.0;
    for i in 0..m {
        let g = objective.potential_grad(particles.particle(i));
        let denom: f64 = gram.row(i).sum();
        for c in 0..particles.dim() {
            // grad log q_hat(x_i) = sum_j 2 gamma (x_j - x_i) K_ij / sum_j K_ij
            let mut num = 0.0;
            for j in 0..m {
                num += two_gamma * (x[[j, c]] - x[[i, c]]) * gram[[i, j]];
            }
            let reference = g[c] + num / denom;
            let diff = estimated[[i, c]] - reference;
            total += diff * diff;
        }
    }
    Ok(total / m as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Normalization;
    use crate::mixture::GaussianMixture;
    use crate::objectives::four_mixture_targets;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn energy_objectives(n: usize) -> Vec<Objective> {
        four_mixture_targets()
            .into_iter()
            .take(n)
            .map(|t| Objective::Energy(EnergyObjective::new(t)))
            .collect()
    }

    fn std_normal_objectives() -> Vec<Objective> {
        vec![Objective::Energy(EnergyObjective::new(
            GaussianMixture::standard_normal(2),
        ))]
    }

    fn small_config(method: Method, k: usize) -> RunConfig {
        RunConfig {
            num_particles: 8,
            dim: 2,
            num_objectives: k,
            num_iterations: 5,
            seed: 13,
            method,
            snapshot_every: 2,
            ..RunConfig::default()
        }
    }

    #[test]
    fn single_particle_single_objective_hand_step() {
        // m = 1, K = 1, standard-normal target, alpha = 0.1, x = [2, 0]:
        // the velocity degenerates to grad g(x) = x, so x' = [1.8, 0].
        let config = RunConfig {
            num_particles: 1,
            num_objectives: 1,
            step_size_alpha: 0.1,
            ..RunConfig::default()
        };
        let state = OptimizerState {
            particles: ParticleSet::new(array![[2.0, 0.0]]).unwrap(),
            weights: init_weights(1).unwrap(),
            iter: 0,
            nn_params: None,
        };
        let (next, record) = mwgrad_step(&state, &std_normal_objectives(), &config).unwrap();
        assert_relative_eq!(next.particles.matrix()[[0, 0]], 1.8, max_relative = 1e-15);
        assert_relative_eq!(next.particles.matrix()[[0, 1]], 0.0);
        assert_eq!(record.weights, vec![1.0]);
        assert_eq!(next.iter, 1);
    }

    #[test]
    fn steps_do_not_mutate_input_state() {
        let config = small_config(Method::MwgradSvgd, 4);
        let objectives = energy_objectives(4);
        let state = init_state(&config, &objectives).unwrap();
        let before = state.particles.clone();
        let before_w = state.weights.clone();
        let _ = mwgrad_step(&state, &objectives, &config).unwrap();
        assert_eq!(state.particles, before);
        assert_eq!(state.weights, before_w);
        assert_eq!(state.iter, 0);
    }

    #[test]
    fn identical_seeds_give_identical_runs() {
        for method in [Method::MwgradSvgd, Method::MwgradBlob, Method::MtSgd, Method::MooSvgd] {
            let config = small_config(method, 4);
            let objectives = energy_objectives(4);
            let a = run(&config, &objectives).unwrap();
            let b = run(&config, &objectives).unwrap();
            assert_eq!(
                a.final_state.particles, b.final_state.particles,
                "method {method} not deterministic"
            );
            assert_eq!(a.trace, b.trace);
        }
    }

    #[test]
    fn single_objective_methods_share_trajectories() {
        // With one objective the weights are pinned to [1], so the kernel
        // methods that share the same velocity estimator coincide exactly.
        let objectives = std_normal_objectives();
        let svgd = run(&small_config(Method::MwgradSvgd, 1), &objectives).unwrap();
        let mt = run(&small_config(Method::MtSgd, 1), &objectives).unwrap();
        let moo = run(&small_config(Method::MooSvgd, 1), &objectives).unwrap();
        assert_eq!(svgd.final_state.particles, mt.final_state.particles);
        assert_eq!(svgd.final_state.particles, moo.final_state.particles);
        for out in [&svgd, &mt, &moo] {
            assert!(out.trace.iter().all(|r| r.weights == vec![1.0]));
        }
    }

    #[test]
    fn single_particle_blob_joins_the_degenerate_family() {
        // At m = 1 the kernel terms vanish, so SVGD and blob produce the
        // same single-objective trajectory.
        let mut config = small_config(Method::MwgradSvgd, 1);
        config.num_particles = 1;
        let objectives = std_normal_objectives();
        let svgd = run(&config, &objectives).unwrap();
        config.method = Method::MwgradBlob;
        let blob = run(&config, &objectives).unwrap();
        config.method = Method::MtSgd;
        let mt = run(&config, &objectives).unwrap();
        config.method = Method::MooSvgd;
        let moo = run(&config, &objectives).unwrap();
        assert_eq!(svgd.final_state.particles, blob.final_state.particles);
        assert_eq!(svgd.final_state.particles, mt.final_state.particles);
        assert_eq!(svgd.final_state.particles, moo.final_state.particles);
    }

    #[test]
    fn stationarity_never_exceeds_grad_norm() {
        let config = small_config(Method::MwgradSvgd, 4);
        let objectives = energy_objectives(4);
        let out = run(&config, &objectives).unwrap();
        for r in &out.trace {
            assert!(r.stationarity <= r.grad_norm_sq + 1e-9);
        }
    }

    #[test]
    fn relabeling_objectives_relabels_weights() {
        let config = small_config(Method::MwgradSvgd, 3);
        let objectives = energy_objectives(3);
        let permuted: Vec<Objective> =
            [2usize, 0, 1].iter().map(|&i| objectives[i].clone()).collect();
        let a = run(&config, &objectives).unwrap();
        let b = run(&config, &permuted).unwrap();
        // particle trajectories agree up to summation-order rounding
        for (x, y) in a
            .final_state
            .particles
            .matrix()
            .iter()
            .zip(b.final_state.particles.matrix().iter())
        {
            assert_relative_eq!(x, y, max_relative = 1e-9, epsilon = 1e-12);
        }
        for (ra, rb) in a.trace.iter().zip(&b.trace) {
            for (k, &p) in [2usize, 0, 1].iter().enumerate() {
                assert_relative_eq!(rb.weights[k], ra.weights[p], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn trace_length_and_snapshot_cadence() {
        let config = small_config(Method::MwgradSvgd, 4);
        let objectives = energy_objectives(4);
        let out = run(&config, &objectives).unwrap();
        assert_eq!(out.trace.len(), 5);
        let iters: Vec<usize> = out.snapshots.iter().map(|(i, _)| *i).collect();
        assert_eq!(iters, vec![0, 2, 4, 5]);
    }

    #[test]
    fn mt_sgd_uniform_weights_for_identity_gram() {
        // Two objectives whose velocities are exactly orthogonal with equal
        // norms give G proportional to the identity, so the min-norm weights
        // are uniform.
        let p = ParticleSet::new(array![[0.0, 0.0]]).unwrap();
        let bundle = VelocityBundle::from_slices(
            vec![array![[3.0, 0.0]], array![[0.0, 3.0]]],
            &p,
        )
        .unwrap();
        let gram = gram_matrix(&bundle, Normalization::Sum).unwrap();
        let w = min_norm_exact(&gram, 1e-10).unwrap();
        assert_relative_eq!(w[0], 0.5, epsilon = 1e-8);
        assert_relative_eq!(w[1], 0.5, epsilon = 1e-8);
    }

    #[test]
    fn repeated_weight_updates_converge_to_min_norm_solution() {
        // On a fixed Gram matrix the one-step update iterated to a fixed
        // point matches the exact solver.
        let g = GramMatrix::new(array![[4.0, 0.5], [0.5, 1.0]]).unwrap();
        let exact = min_norm_exact(&g, 1e-14).unwrap();
        let mut w = init_weights(2).unwrap();
        let beta = 1.0 / (2.0 * g.trace());
        for _ in 0..20_000 {
            w = update_weights(&w, &g, beta).unwrap();
        }
        let gap = g.quadratic_form(w.as_slice()) - g.quadratic_form(exact.as_slice());
        assert!(gap.abs() < 1e-6, "gap {gap}");
    }

    #[test]
    fn exact_conflict_particles_are_fixed_points() {
        let p = ParticleSet::new(array![[0.4, -0.6], [1.0, 2.0]]).unwrap();
        let v1 = array![[1.5, -2.0], [0.25, 0.75]];
        let v2 = -&v1;
        let bundle = VelocityBundle::from_slices(vec![v1, v2], &p).unwrap();
        let (moved, weights) = moo_update_from_bundle(&p, &bundle, 0.1, 0).unwrap();
        assert_eq!(moved.matrix(), p.matrix());
        for w in &weights {
            assert_eq!(w.as_slice(), &[0.5, 0.5]);
        }
    }

    #[test]
    fn moo_particles_get_distinct_weights() {
        // Construct per-particle Gram matrices with different minimizers and
        // check both against the 1-D grid oracle.
        let p = ParticleSet::new(array![[0.0, 0.0], [1.0, 1.0]]).unwrap();
        let v1 = array![[2.0, 0.0], [1.0, 0.0]];
        let v2 = array![[0.0, 1.0], [0.0, 3.0]];
        let bundle = VelocityBundle::from_slices(vec![v1.clone(), v2.clone()], &p).unwrap();
        let weights = moo_particle_weights(&bundle).unwrap();
        assert!(
            (weights[0][0] - weights[1][0]).abs() > 0.1,
            "weights should differ: {:?} vs {:?}",
            weights[0].as_slice(),
            weights[1].as_slice()
        );
        for (i, w) in weights.iter().enumerate() {
            let g00: f64 = (0..2).map(|c| v1[[i, c]] * v1[[i, c]]).sum();
            let g11: f64 = (0..2).map(|c| v2[[i, c]] * v2[[i, c]]).sum();
            let g01: f64 = (0..2).map(|c| v1[[i, c]] * v2[[i, c]]).sum();
            let f = |w: &[f64]| {
                g00 * w[0] * w[0] + 2.0 * g01 * w[0] * w[1] + g11 * w[1] * w[1]
            };
            let mut best = (vec![0.0, 1.0], f64::INFINITY);
            let res = 1e-5;
            let n = (1.0 / res) as usize;
            for t in 0..=n {
                let w0 = t as f64 * res;
                let cand = [w0, 1.0 - w0];
                let val = f(&cand);
                if val < best.1 {
                    best = (cand.to_vec(), val);
                }
            }
            assert!(
                (f(w.as_slice()) - best.1).abs() < 1e-6,
                "particle {i}: solver {:?} vs grid {:?}",
                w.as_slice(),
                best.0
            );
        }
    }

    #[test]
    fn gradient_error_zero_for_reference_field() {
        let config = RunConfig {
            num_particles: 20,
            seed: 5,
            ..RunConfig::default()
        };
        let particles = init_particles(&config);
        let objective = EnergyObjective::new(GaussianMixture::standard_normal(2));
        let kernel = RbfKernel::new(0.01).unwrap();
        // Build the exact reference field by inverting the probe definition.
        let x = particles.matrix();
        let gram = kernel.gram(x);
        let mut reference = Array2::<f64>::zeros((20, 2));
        for i in 0..20 {
            let g = objective.potential_grad(particles.particle(i));
            let denom: f64 = gram.row(i).sum();
            for c in 0..2 {
                let mut num = 0.0;
                for j in 0..20 {
                    num += 2.0 * kernel.gamma() * (x[[j, c]] - x[[i, c]]) * gram[[i, j]];
                }
                reference[[i, c]] = g[c] + num / denom;
            }
        }
        let err = gradient_error(reference.view(), &particles, &objective, &kernel).unwrap();
        assert!(err < 1e-28, "error {err}");
        // a constant offset c contributes exactly ||c||^2
        let shifted = &reference + &array![[0.3, -0.4]];
        let err = gradient_error(shifted.view(), &particles, &objective, &kernel).unwrap();
        assert_relative_eq!(err, 0.25, max_relative = 1e-12);
    }

    #[test]
    fn gradient_error_rejects_high_dimension() {
        let config = RunConfig {
            num_particles: 4,
            dim: 3,
            ..RunConfig::default()
        };
        let particles = init_particles(&config);
        let objective = EnergyObjective::new(GaussianMixture::standard_normal(3));
        let kernel = RbfKernel::new(0.01).unwrap();
        let est = Array2::zeros((4, 3));
        assert!(gradient_error(est.view(), &particles, &objective, &kernel).is_err());
    }

    #[test]
    fn svgd_gradient_error_is_finite_diagnostic() {
        let config = RunConfig {
            num_particles: 500,
            seed: 2,
            ..RunConfig::default()
        };
        let particles = init_particles(&config);
        let objective = EnergyObjective::new(GaussianMixture::standard_normal(2));
        let kernel = RbfKernel::new(0.01).unwrap();
        let est = svgd_velocity(&particles, &objective, &kernel, Normalization::Sum).unwrap();
        let err = gradient_error(est.view(), &particles, &objective, &kernel).unwrap();
        assert!(err.is_finite());
    }

    #[test]
    fn kernel_methods_reject_sample_objectives() {
        let mut config = small_config(Method::MwgradSvgd, 1);
        config.num_particles = 4;
        let samples = crate::objectives::SampleObjective::new(
            array![[0.0, 0.0], [1.0, 1.0]],
            Divergence::Kl,
        )
        .unwrap();
        let objectives = vec![Objective::Samples(samples)];
        assert!(init_state(&config, &objectives).is_err());
    }

    #[test]
    fn divergence_guard_reports_iteration_and_particle() {
        let config = RunConfig {
            num_particles: 1,
            num_objectives: 1,
            step_size_alpha: 1e12,
            ..RunConfig::default()
        };
        let state = OptimizerState {
            particles: ParticleSet::new(array![[3.0, 0.0]]).unwrap(),
            weights: init_weights(1).unwrap(),
            iter: 7,
            nn_params: None,
        };
        match mwgrad_step(&state, &std_normal_objectives(), &config) {
            Err(Error::Diverged {
                iteration,
                particle,
            }) => {
                assert_eq!(iteration, 7);
                assert_eq!(particle, 0);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn nn_method_runs_and_warm_starts() {
        let mut config = small_config(Method::MwgradNn, 2);
        config.num_particles = 6;
        config.nn.hidden = vec![8, 8];
        config.nn.train_steps = 3;
        config.nn.reference_samples = 12;
        let objectives = energy_objectives(2);
        let out = run(&config, &objectives).unwrap();
        assert_eq!(out.trace.len(), config.num_iterations);
        let nets = out.final_state.nn_params.as_ref().unwrap();
        assert_eq!(nets.len(), 2);
        // training moved the parameters away from initialization
        let fresh = init_state(&config, &objectives).unwrap();
        assert_ne!(
            fresh.nn_params.as_ref().unwrap()[0].layers()[0].weight,
            nets[0].layers()[0].weight
        );
        // energy objectives report estimated values even for the critic method
        assert!(out.trace[0].per_objective_value.iter().all(|v| v.is_some()));
    }

    #[test]
    fn nn_method_on_sample_targets_reports_unavailable_values() {
        let mut gen = rng::substream(3, "target-samples", 0, 0);
        let targets = four_mixture_targets();
        let objectives: Vec<Objective> = targets
            .iter()
            .take(2)
            .map(|t| {
                Objective::Samples(
                    crate::objectives::SampleObjective::new(
                        crate::objectives::draw_target_samples(t, 10, &mut gen).unwrap(),
                        Divergence::Kl,
                    )
                    .unwrap(),
                )
            })
            .collect();
        let mut config = small_config(Method::MwgradNn, 2);
        config.num_particles = 6;
        config.nn.hidden = vec![8];
        config.nn.train_steps = 2;
        let out = run(&config, &objectives).unwrap();
        assert!(out
            .trace
            .iter()
            .all(|r| r.per_objective_value.iter().all(|v| v.is_none())));
    }
}
