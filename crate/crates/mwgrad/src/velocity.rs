//! Per-objective velocity-field estimators evaluated at the particles.
//!
//! Each estimator approximates the gradient of the first variation of one
//! objective functional at the current empirical distribution, producing an
//! m x d matrix (one row per particle).

use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::config::Normalization;
use crate::error::{Error, Result};
use crate::kernel::RbfKernel;
use crate::nn::{Mlp, VariationalSpec};
use crate::objectives::EnergyObjective;
use crate::particles::ParticleSet;

/// K per-objective velocity fields evaluated at the m particles.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityBundle {
    v: Array3<f64>,
}

impl VelocityBundle {
    /// Stacks per-objective m x d velocity matrices. All slices must agree
    /// with the particle set's shape and be finite.
    pub fn from_slices(slices: Vec<Array2<f64>>, particles: &ParticleSet) -> Result<Self> {
        if slices.is_empty() {
            return Err(Error::invalid("bundle needs at least one objective"));
        }
        let (m, d) = (particles.len(), particles.dim());
        let mut v = Array3::<f64>::zeros((slices.len(), m, d));
        for (k, s) in slices.iter().enumerate() {
            if s.nrows() != m || s.ncols() != d {
                return Err(Error::invalid(format!(
                    "velocity slice {k} is {}x{}, expected {m}x{d}",
                    s.nrows(),
                    s.ncols()
                )));
            }
            if s.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("velocity slice {k}")));
            }
            v.index_axis_mut(Axis(0), k).assign(s);
        }
        Ok(VelocityBundle { v })
    }

    pub fn num_objectives(&self) -> usize {
        self.v.shape()[0]
    }

    pub fn num_particles(&self) -> usize {
        self.v.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.v.shape()[2]
    }

    /// The m x d velocity matrix of objective k.
    pub fn objective(&self, k: usize) -> ArrayView2<'_, f64> {
        self.v.index_axis(Axis(0), k)
    }
}

/// Kernelized drift-plus-repulsion estimate of the relative-entropy flow:
/// row i is sum_j K(x_i, x_j) grad g(x_j) - sum_j grad_{x_j} K(x_i, x_j).
///
/// `Normalization::Sum` keeps the plain particle sums; `Mean` divides by m.
pub fn svgd_velocity(
    particles: &ParticleSet,
    objective: &EnergyObjective,
    kernel: &RbfKernel,
    normalization: Normalization,
) -> Result<Array2<f64>> {
    check_dims(particles, objective)?;
    let x = particles.matrix();
    let (m, d) = (particles.len(), particles.dim());
    let gram = kernel.gram(x);
    let mut pot_grads = Array2::<f64>::zeros((m, d));
    for (i, mut row) in pot_grads.rows_mut().into_iter().enumerate() {
        row.assign(&objective.potential_grad(particles.particle(i)));
    }
    // drift: K . grad g
    let drift = gram.dot(&pot_grads);
    // repulsion: sum_j 2 gamma (x_i - x_j) K_ij = 2 gamma (rowsum_i x_i - (K x)_i)
    let row_sums = gram.sum_axis(Axis(1));
    let kx = gram.dot(&x);
    let mut out = drift;
    let two_gamma = 2.0 * kernel.gamma();
    for i in 0..m {
        for c in 0..d {
            out[[i, c]] -= two_gamma * (row_sums[i] * x[[i, c]] - kx[[i, c]]);
        }
    }
    if normalization == Normalization::Mean {
        out /= m as f64;
    }
    Ok(out)
}

/// Kernel-density ("blob") estimate of the same flow: row i is
/// grad g(x_i)
///   - sum_j grad_{x_j} K(x_i, x_j) / sum_l K(x_j, x_l)
///   - sum_j grad_{x_j} K(x_i, x_j) / sum_l K(x_i, x_l).
pub fn blob_velocity(
    particles: &ParticleSet,
    objective: &EnergyObjective,
    kernel: &RbfKernel,
) -> Result<Array2<f64>> {
    check_dims(particles, objective)?;
    let x = particles.matrix();
    let (m, d) = (particles.len(), particles.dim());
    let gram = kernel.gram(x);
    let row_sums = gram.sum_axis(Axis(1));
    // column-weighted kernel: Kw_ij = K_ij / s_j
    let mut kw = gram.clone();
    for j in 0..m {
        let s = row_sums[j];
        kw.column_mut(j).mapv_inplace(|v| v / s);
    }
    let kw_row_sums = kw.sum_axis(Axis(1));
    let kw_x = kw.dot(&x);
    let k_x = gram.dot(&x);
    let two_gamma = 2.0 * kernel.gamma();
    let mut out = Array2::<f64>::zeros((m, d));
    for i in 0..m {
        let g = objective.potential_grad(particles.particle(i));
        for c in 0..d {
            let term2 = two_gamma * (kw_row_sums[i] * x[[i, c]] - kw_x[[i, c]]);
            let term3 = two_gamma * (row_sums[i] * x[[i, c]] - k_x[[i, c]]) / row_sums[i];
            out[[i, c]] = g[c] - term2 - term3;
        }
    }
    Ok(out)
}

/// Velocity recovered from a trained variational critic: row i is
/// grad h(x_i), with h recovered from the network output h' according to
/// the spec's change of variables.
pub fn nn_velocity(
    params: &Mlp,
    particles: &ParticleSet,
    spec: &VariationalSpec,
) -> Result<Array2<f64>> {
    if params.output_activation() != spec.output_activation() {
        return Err(Error::invalid(
            "network output activation does not match variational spec",
        ));
    }
    let x = particles.matrix();
    match spec {
        VariationalSpec::KlSample => params.input_grads_batch(x),
        VariationalSpec::KlEnergy { target } => {
            if target.dim() != particles.dim() {
                return Err(Error::invalid("target dimension mismatch"));
            }
            let (h, grad_h) = params.forward_and_input_grads(x)?;
            let mut out = grad_h;
            for (i, mut row) in out.rows_mut().into_iter().enumerate() {
                if h[i] <= 0.0 {
                    return Err(Error::NumericDomain(format!(
                        "positive critic emitted {} at particle {i}",
                        h[i]
                    )));
                }
                // grad h = grad h'/h' + grad log p - grad log pi
                let xi = particles.particle(i);
                let score = target.grad_log_density(xi);
                for c in 0..row.len() {
                    row[c] = row[c] / h[i] - xi[c] - score[c];
                }
            }
            Ok(out)
        }
        VariationalSpec::Js => {
            let (h, grad_h) = params.forward_and_input_grads(x)?;
            let mut out = grad_h;
            for (i, mut row) in out.rows_mut().into_iter().enumerate() {
                if h[i] >= 1.0 {
                    return Err(Error::NumericDomain(format!(
                        "bounded critic emitted {} at particle {i}",
                        h[i]
                    )));
                }
                // h = 1/2 log((1 - h')/2)  =>  grad h = -grad h' / (2 (1 - h'))
                let scale = -1.0 / (2.0 * (1.0 - h[i]));
                row.mapv_inplace(|v| v * scale);
            }
            Ok(out)
        }
    }
}

fn check_dims(particles: &ParticleSet, objective: &EnergyObjective) -> Result<()> {
    if particles.dim() != objective.dim() {
        return Err(Error::invalid(format!(
            "particles have dimension {}, objective expects {}",
            particles.dim(),
            objective.dim()
        )));
    }
    Ok(())
}
