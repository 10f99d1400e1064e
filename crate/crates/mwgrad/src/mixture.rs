//! Gaussian mixtures: log density, score and sampling.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;

/// One weighted Gaussian component with a symmetric positive-definite
/// covariance. The Cholesky factor and log normalizer are precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    weight: f64,
    mean: Array1<f64>,
    covariance: Array2<f64>,
    chol: Array2<f64>,
    /// log of the density normalizer: -(d/2) log(2 pi) - sum_i log L_ii.
    log_norm: f64,
}

impl GaussianComponent {
    pub fn new(weight: f64, mean: Array1<f64>, covariance: Array2<f64>) -> Result<Self> {
        if !(weight > 0.0 && weight <= 1.0) || !weight.is_finite() {
            return Err(Error::invalid(format!(
                "component weight must lie in (0, 1], got {weight}"
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("component mean".into()));
        }
        if covariance.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("component covariance".into()));
        }
        let d = mean.len();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::invalid(format!(
                "covariance must be {d}x{d}, got {}x{}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        let chol = linalg::cholesky(covariance.view())?;
        let log_det_half: f64 = (0..d).map(|i| chol[[i, i]].ln()).sum();
        let log_norm = -(d as f64) * 0.5 * (2.0 * std::f64::consts::PI).ln() - log_det_half;
        Ok(GaussianComponent {
            weight,
            mean,
            covariance,
            chol,
            log_norm,
        })
    }

    /// Component with identity covariance, the default in the synthetic
    /// multi-target setups.
    pub fn isotropic(weight: f64, mean: Array1<f64>) -> Result<Self> {
        let d = mean.len();
        GaussianComponent::new(weight, mean, Array2::eye(d))
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn mean(&self) -> ArrayView1<'_, f64> {
        self.mean.view()
    }

    pub fn covariance(&self) -> &Array2<f64> {
        &self.covariance
    }

    /// log N(x | mean, cov) including the normalizer.
    fn log_density(&self, x: ArrayView1<f64>) -> f64 {
        let diff = &x - &self.mean;
        let y = linalg::solve_lower(self.chol.view(), diff.view());
        self.log_norm - 0.5 * y.iter().map(|v| v * v).sum::<f64>()
    }

    /// Sigma^{-1} (mean - x).
    fn precision_pull(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let diff = &self.mean - &x;
        linalg::cholesky_solve(self.chol.view(), diff.view())
    }
}

/// A normalized mixture of Gaussians; component weights sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    components: Vec<GaussianComponent>,
    dim: usize,
}

impl GaussianMixture {
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::invalid("mixture needs at least one component"))?;
        let dim = first.mean.len();
        if components.iter().any(|c| c.mean.len() != dim) {
            return Err(Error::invalid("mixture components disagree on dimension"));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "mixture weights must sum to 1, got {total}"
            )));
        }
        Ok(GaussianMixture { components, dim })
    }

    /// The standard normal as a one-component mixture.
    pub fn standard_normal(dim: usize) -> Self {
        let comp = GaussianComponent::isotropic(1.0, Array1::zeros(dim)).expect("valid component");
        GaussianMixture {
            components: vec![comp],
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    /// log sum_c eta_c N(x | mu_c, Sigma_c), evaluated via log-sum-exp.
    pub fn log_density(&self, x: ArrayView1<f64>) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        let terms: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.weight.ln() + c.log_density(x))
            .collect();
        log_sum_exp(&terms)
    }

    /// Gradient of `log_density`: sum_c r_c(x) Sigma_c^{-1} (mu_c - x), with
    /// r_c the posterior component responsibilities.
    pub fn grad_log_density(&self, x: ArrayView1<f64>) -> Array1<f64> {
        debug_assert_eq!(x.len(), self.dim);
        let log_terms: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.weight.ln() + c.log_density(x))
            .collect();
        let lse = log_sum_exp(&log_terms);
        let mut grad = Array1::<f64>::zeros(self.dim);
        for (c, lt) in self.components.iter().zip(&log_terms) {
            let resp = (lt - lse).exp();
            if resp > 0.0 {
                grad.scaled_add(resp, &c.precision_pull(x));
            }
        }
        grad
    }

    /// One draw: categorical component choice, then mu + L z with z standard
    /// normal. Deterministic for a fixed generator state.
    pub fn sample(&self, gen: &mut ChaCha12Rng) -> Array1<f64> {
        let u: f64 = gen.gen();
        let mut acc = 0.0;
        let mut chosen = self.components.len() - 1;
        for (idx, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                chosen = idx;
                break;
            }
        }
        let c = &self.components[chosen];
        let z = Array1::from_iter((0..self.dim).map(|_| gen.sample::<f64, _>(StandardNormal)));
        &c.mean + &c.chol.dot(&z)
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}
