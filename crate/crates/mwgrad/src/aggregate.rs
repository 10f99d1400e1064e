//! Weight dynamics and velocity aggregation: the velocity Gram matrix,
//! Euclidean projection onto the simplex, the one-step weight update and the
//! exact min-norm oracle.

use ndarray::{Array2, ArrayView2};

use crate::config::Normalization;
use crate::error::{Error, Result};
use crate::linalg::symmetric_eigenvalues;
use crate::velocity::VelocityBundle;
use crate::weights::SimplexWeights;

/// K x K matrix of velocity inner products summed over particles.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    g: Array2<f64>,
}

impl GramMatrix {
    /// Validates symmetry (within 1e-12) and positive semidefiniteness
    /// (eigenvalues >= -1e-9).
    pub fn new(g: Array2<f64>) -> Result<Self> {
        let k = g.nrows();
        if g.ncols() != k || k == 0 {
            return Err(Error::invalid("Gram matrix must be square and non-empty"));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Gram matrix".into()));
        }
        let scale = g.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
        for i in 0..k {
            for j in (i + 1)..k {
                if (g[[i, j]] - g[[j, i]]).abs() > 1e-12 * scale {
                    return Err(Error::invalid("Gram matrix is not symmetric"));
                }
            }
        }
        let min_eig = symmetric_eigenvalues(g.view())[0];
        if min_eig < -1e-9 * scale {
            return Err(Error::invalid(format!(
                "Gram matrix is not positive semidefinite (min eigenvalue {min_eig:.3e})"
            )));
        }
        Ok(GramMatrix { g })
    }

    pub fn dim(&self) -> usize {
        self.g.nrows()
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.g.view()
    }

    /// w^T G w.
    pub fn quadratic_form(&self, w: &[f64]) -> f64 {
        let mut total = 0.0;
        for i in 0..self.dim() {
            let mut row = 0.0;
            for j in 0..self.dim() {
                row += self.g[[i, j]] * w[j];
            }
            total += w[i] * row;
        }
        total
    }

    fn times(&self, w: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|i| (0..self.dim()).map(|j| self.g[[i, j]] * w[j]).sum())
            .collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.g[[i, i]]).sum()
    }
}

/// G[k][l] = sum_i <v_k(x_i), v_l(x_i)>, divided by m under `Mean`.
/// The upper triangle is mirrored so symmetry holds exactly.
pub fn gram_matrix(bundle: &VelocityBundle, normalization: Normalization) -> Result<GramMatrix> {
    let k = bundle.num_objectives();
    let mut g = Array2::<f64>::zeros((k, k));
    for a in 0..k {
        let va = bundle.objective(a);
        for b in a..k {
            let vb = bundle.objective(b);
            let dot: f64 = va.iter().zip(vb.iter()).map(|(x, y)| x * y).sum();
            g[[a, b]] = dot;
            g[[b, a]] = dot;
        }
    }
    if normalization == Normalization::Mean {
        g /= bundle.num_particles() as f64;
    }
    GramMatrix::new(g)
}

/// Euclidean projection onto the probability simplex by the sort-threshold
/// rule: sort descending, find the largest prefix whose shifted entries stay
/// positive, shift by that prefix's threshold and clamp at zero.
///
/// Feasible inputs are returned unchanged, and the rounding residual of the
/// output sum is folded into the largest coordinate, so projecting twice
/// gives the identical vector.
pub fn project_simplex(v: &[f64]) -> Result<SimplexWeights> {
    if v.is_empty() {
        return Err(Error::invalid("cannot project an empty vector"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("projection input".into()));
    }
    let input_sum: f64 = v.iter().sum();
    if input_sum == 1.0 && v.iter().all(|&x| x >= 0.0) {
        return SimplexWeights::new(v.to_vec());
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut prefix = 0.0;
    let mut theta = 0.0;
    for (j, &vj) in sorted.iter().enumerate() {
        prefix += vj;
        let candidate = (prefix - 1.0) / (j + 1) as f64;
        if vj - candidate > 0.0 {
            theta = candidate;
        }
    }
    let mut w: Vec<f64> = v.iter().map(|&x| (x - theta).max(0.0)).collect();
    // Fold the rounding residual into the largest coordinate until the sum
    // is exactly one.
    for _ in 0..8 {
        let sum: f64 = w.iter().sum();
        if sum == 1.0 {
            break;
        }
        let idx = w
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        w[idx] += 1.0 - sum;
    }
    SimplexWeights::new(w)
}

/// One projected-gradient step on w^T G w: project(w - beta * G w).
pub fn update_weights(w: &SimplexWeights, g: &GramMatrix, beta: f64) -> Result<SimplexWeights> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::invalid("beta must be positive and finite"));
    }
    if w.len() != g.dim() {
        return Err(Error::invalid(format!(
            "weights have length {}, Gram matrix is {}x{}",
            w.len(),
            g.dim(),
            g.dim()
        )));
    }
    let gw = g.times(w.as_slice());
    let shifted: Vec<f64> = w
        .as_slice()
        .iter()
        .zip(&gw)
        .map(|(wi, gi)| wi - beta * gi)
        .collect();
    project_simplex(&shifted)
}

/// Iteration cap for the min-norm solve.
const MIN_NORM_MAX_ITERS: usize = 100_000;

/// Solves min_{w in simplex} w^T G w by iterated projected gradient with a
/// conservative step 1/(2 trace G), stopping when the objective improves by
/// less than `tol`.
pub fn min_norm_exact(g: &GramMatrix, tol: f64) -> Result<SimplexWeights> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let k = g.dim();
    let mut w = crate::weights::init_weights(k)?;
    if k == 1 {
        return Ok(w);
    }
    let trace = g.trace();
    if trace <= 0.0 {
        // G is (numerically) zero: every w attains the same objective.
        return Ok(w);
    }
    let step = 1.0 / (2.0 * trace);
    let mut value = g.quadratic_form(w.as_slice());
    for _ in 0..MIN_NORM_MAX_ITERS {
        let next = update_weights(&w, g, step)?;
        let next_value = g.quadratic_form(next.as_slice());
        let delta = value - next_value;
        w = next;
        value = next_value;
        if delta < tol {
            return Ok(w);
        }
    }
    Err(Error::MinNormDidNotConverge {
        best: w.into_vec(),
        value,
    })
}

/// Convex combination of the bundle's velocity fields: row i is
/// sum_k w_k v_k(x_i).
pub fn aggregate_velocity(bundle: &VelocityBundle, w: &SimplexWeights) -> Result<Array2<f64>> {
    if w.len() != bundle.num_objectives() {
        return Err(Error::invalid(format!(
            "{} weights for {} objectives",
            w.len(),
            bundle.num_objectives()
        )));
    }
    let mut out = Array2::<f64>::zeros((bundle.num_particles(), bundle.dim()));
    for k in 0..bundle.num_objectives() {
        out.scaled_add(w[k], &bundle.objective(k));
    }
    Ok(out)
}

/// The stationarity diagnostic min_{w in simplex} w^T G w (zero exactly at a
/// Pareto stationary distribution).
pub fn pareto_stationarity(g: &GramMatrix) -> Result<f64> {
    let w = min_norm_exact(g, 1e-10)?;
    Ok(g.quadratic_form(w.as_slice()).max(0.0))
}
