//! Objective functionals: energy targets given in closed form and targets
//! known only through samples.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::RbfKernel;
use crate::mixture::{GaussianComponent, GaussianMixture};
use crate::particles::ParticleSet;

/// Divergence used when a target is represented by samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Divergence {
    Kl,
    Js,
}

/// Relative-entropy objective against a known target density. The potential
/// is g(x) = -log pi(x); the mixture is kept normalized so the functional
/// value can be estimated for traces.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyObjective {
    target: GaussianMixture,
}

impl EnergyObjective {
    pub fn new(target: GaussianMixture) -> Self {
        EnergyObjective { target }
    }

    pub fn target(&self) -> &GaussianMixture {
        &self.target
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    /// g(x) = -log pi(x).
    pub fn potential(&self, x: ArrayView1<f64>) -> f64 {
        -self.target.log_density(x)
    }

    /// grad g(x) = -grad log pi(x).
    pub fn potential_grad(&self, x: ArrayView1<f64>) -> Array1<f64> {
        -&self.target.grad_log_density(x)
    }

    /// Plug-in estimate of the functional value at the current particles:
    /// (1/m) sum_i [g(x_i) + log q_hat(x_i)] with q_hat a kernel density
    /// estimate built from the run's RBF kernel. Diagnostic only; the
    /// entropy term is undefined on discrete particles without smoothing.
    pub fn estimate_value(&self, particles: &ParticleSet, kernel: &RbfKernel) -> f64 {
        let m = particles.len() as f64;
        let d = particles.dim() as f64;
        // exp(-gamma ||x - y||^2) normalized as a Gaussian: (gamma/pi)^(d/2)
        let log_kde_norm = 0.5 * d * (kernel.gamma() / std::f64::consts::PI).ln();
        let gram = kernel.gram(particles.matrix());
        let mut total = 0.0;
        for i in 0..particles.len() {
            let log_q = log_kde_norm + (gram.row(i).sum() / m).ln();
            total += self.potential(particles.particle(i)) + log_q;
        }
        total / m
    }
}

/// A target known only through draws from it.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleObjective {
    samples: Array2<f64>,
    divergence: Divergence,
}

impl SampleObjective {
    pub fn new(samples: Array2<f64>, divergence: Divergence) -> Result<Self> {
        if samples.nrows() < 2 {
            return Err(Error::invalid(format!(
                "a sample objective needs at least 2 samples, got {}",
                samples.nrows()
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("target samples".into()));
        }
        Ok(SampleObjective {
            samples,
            divergence,
        })
    }

    pub fn samples(&self) -> ArrayView2<'_, f64> {
        self.samples.view()
    }

    pub fn divergence(&self) -> Divergence {
        self.divergence
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }
}

/// One objective functional of the multi-target problem.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    Energy(EnergyObjective),
    Samples(SampleObjective),
}

impl Objective {
    pub fn dim(&self) -> usize {
        match self {
            Objective::Energy(o) => o.dim(),
            Objective::Samples(o) => o.dim(),
        }
    }

    pub fn as_energy(&self) -> Option<&EnergyObjective> {
        match self {
            Objective::Energy(o) => Some(o),
            Objective::Samples(_) => None,
        }
    }
}

/// The four two-component mixtures used by the synthetic multi-target
/// experiments: each has an outer mode (weight 0.7) in one corner and a
/// near-origin mode (weight 0.3), with identity covariances.
pub fn four_mixture_targets() -> Vec<GaussianMixture> {
    let spec: [([f64; 2], [f64; 2]); 4] = [
        ([4.0, -4.0], [0.0, 0.1]),
        ([-4.0, 4.0], [0.0, -0.1]),
        ([-4.0, -4.0], [0.1, 0.0]),
        ([4.0, 4.0], [-0.1, 0.0]),
    ];
    spec.iter()
        .map(|(outer, inner)| {
            GaussianMixture::new(vec![
                GaussianComponent::isotropic(0.7, Array1::from_vec(outer.to_vec()))
                    .expect("valid component"),
                GaussianComponent::isotropic(0.3, Array1::from_vec(inner.to_vec()))
                    .expect("valid component"),
            ])
            .expect("valid mixture")
        })
        .collect()
}

/// Draws n i.i.d. samples from the mixture into an n x d matrix.
pub fn draw_target_samples(
    mixture: &GaussianMixture,
    n: usize,
    gen: &mut ChaCha12Rng,
) -> Result<Array2<f64>> {
    if n == 0 {
        return Err(Error::invalid("sample count must be >= 1"));
    }
    let d = mixture.dim();
    let mut out = Array2::<f64>::zeros((n, d));
    for mut row in out.rows_mut() {
        row.assign(&mixture.sample(gen));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn first_target() -> GaussianMixture {
        four_mixture_targets().remove(0)
    }

    #[test]
    fn first_target_log_density_at_outer_mode() {
        // log(0.7/(2 pi) + 0.3/(2 pi) exp(-0.5 ||[4,-4]-[0,0.1]||^2))
        let gm = first_target();
        assert_relative_eq!(
            gm.log_density(array![4.0, -4.0].view()),
            -2.1945519781802134,
            max_relative = 1e-13
        );
    }

    #[test]
    fn targets_match_tabulated_parameters() {
        let targets = four_mixture_targets();
        assert_eq!(targets.len(), 4);
        assert_eq!(targets[0].components()[0].mean(), array![4.0, -4.0].view());
        for t in &targets {
            assert_eq!(t.components().len(), 2);
            assert_relative_eq!(t.components()[0].weight(), 0.7);
            assert_relative_eq!(t.components()[1].weight(), 0.3);
            for c in t.components() {
                assert_eq!(c.covariance(), &Array2::<f64>::eye(2));
            }
        }
    }

    #[test]
    fn grad_log_density_matches_finite_differences() {
        let gm = first_target();
        let x = array![1.0, 1.0];
        let g = gm.grad_log_density(x.view());
        let h = 1e-5;
        for c in 0..2 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += h;
            xm[c] -= h;
            let fd = (gm.log_density(xp.view()) - gm.log_density(xm.view())) / (2.0 * h);
            assert!(
                ((g[c] - fd) / fd.abs().max(1e-8)).abs() < 1e-6,
                "component {c}: {} vs {}",
                g[c],
                fd
            );
        }
    }

    #[test]
    fn potential_grad_is_negated_score() {
        let obj = EnergyObjective::new(GaussianMixture::standard_normal(2));
        let g = obj.potential_grad(array![2.0, 0.0].view());
        assert_relative_eq!(g[0], 2.0, max_relative = 1e-14);
        assert_relative_eq!(g[1], 0.0);
    }

    #[test]
    fn potential_grad_vanishes_at_mode() {
        let obj = EnergyObjective::new(GaussianMixture::standard_normal(2));
        let g = obj.potential_grad(array![0.0, 0.0].view());
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn potential_grad_matches_finite_differences_random_mixtures() {
        let mut gen = crate::rng::substream(21, "test-objectives", 0, 0);
        use rand::Rng;
        let mut cases = 0;
        for &d in &[1usize, 2, 5] {
            for _ in 0..67 {
                // random 2-component mixture with random SPD covariances
                let comps = (0..2)
                    .map(|_| {
                        let mean = Array1::from_iter((0..d).map(|_| gen.gen_range(-2.0..2.0)));
                        let a = Array2::from_shape_fn((d, d), |_| gen.gen_range(-0.5..0.5));
                        let cov = a.t().dot(&a) + Array2::<f64>::eye(d) * 0.5;
                        (mean, cov)
                    })
                    .collect::<Vec<_>>();
                let gm = GaussianMixture::new(vec![
                    GaussianComponent::new(0.6, comps[0].0.clone(), comps[0].1.clone()).unwrap(),
                    GaussianComponent::new(0.4, comps[1].0.clone(), comps[1].1.clone()).unwrap(),
                ])
                .unwrap();
                let x = Array1::from_iter((0..d).map(|_| gen.gen_range(-3.0..3.0)));
                let g = gm.grad_log_density(x.view());
                let h = 1e-5;
                for c in 0..d {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[c] += h;
                    xm[c] -= h;
                    let fd = (gm.log_density(xp.view()) - gm.log_density(xm.view())) / (2.0 * h);
                    let denom = fd.abs().max(1e-6);
                    assert!(
                        ((g[c] - fd) / denom).abs() < 1e-5,
                        "d={d} comp {c}: analytic {} vs fd {}",
                        g[c],
                        fd
                    );
                }
                cases += 1;
            }
        }
        assert_eq!(cases, 201);
    }

    #[test]
    fn draw_target_samples_shape_and_determinism() {
        let gm = first_target();
        let mut a = crate::rng::substream(1, "target-samples", 0, 0);
        let mut b = crate::rng::substream(1, "target-samples", 0, 0);
        let sa = draw_target_samples(&gm, 30, &mut a).unwrap();
        let sb = draw_target_samples(&gm, 30, &mut b).unwrap();
        assert_eq!(sa.shape(), &[30, 2]);
        assert_eq!(sa, sb);
    }

    #[test]
    fn large_sample_covariance_is_near_identity() {
        let gm = GaussianMixture::standard_normal(2);
        let mut gen = crate::rng::substream(2, "target-samples", 0, 0);
        let s = draw_target_samples(&gm, 100_000, &mut gen).unwrap();
        let n = s.nrows() as f64;
        let mean = s.sum_axis(ndarray::Axis(0)) / n;
        let mut cov = Array2::<f64>::zeros((2, 2));
        for row in s.rows() {
            let d = &row - &mean;
            for i in 0..2 {
                for j in 0..2 {
                    cov[[i, j]] += d[i] * d[j];
                }
            }
        }
        cov /= n;
        let mut frob = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let target = if i == j { 1.0 } else { 0.0 };
                frob += (cov[[i, j]] - target).powi(2);
            }
        }
        assert!(frob.sqrt() < 0.05, "covariance error {}", frob.sqrt());
    }

    #[test]
    fn sample_objective_needs_two_samples() {
        assert!(SampleObjective::new(Array2::zeros((1, 2)), Divergence::Kl).is_err());
        assert!(SampleObjective::new(array![[0.0], [f64::NAN]], Divergence::Kl).is_err());
    }

    #[test]
    fn estimate_value_is_finite() {
        let obj = EnergyObjective::new(first_target());
        let config = crate::config::RunConfig::default();
        let particles = crate::particles::init_particles(&config);
        let kernel = RbfKernel::new(0.01).unwrap();
        assert!(obj.estimate_value(&particles, &kernel).is_finite());
    }
}
