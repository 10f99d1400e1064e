//! RBF kernel K(x, y) = exp(-gamma ||x - y||^2) and its gradient.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Radial basis function kernel with a fixed inverse squared-bandwidth
/// `gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbfKernel {
    gamma: f64,
}

impl RbfKernel {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::invalid(format!(
                "kernel gamma must be positive and finite, got {gamma}"
            )));
        }
        Ok(RbfKernel { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// exp(-gamma ||x - y||^2), in (0, 1].
    pub fn eval(&self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::invalid(format!(
                "kernel arguments disagree on dimension: {} vs {}",
                x.len(),
                y.len()
            )));
        }
        Ok((-self.gamma * sq_dist(x, y)).exp())
    }

    /// Gradient with respect to the second argument:
    /// grad_y K(x, y) = 2 gamma (x - y) K(x, y).
    pub fn grad_y(&self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<Array1<f64>> {
        let k = self.eval(x, y)?;
        let mut g = Array1::<f64>::zeros(x.len());
        for ((gi, xi), yi) in g.iter_mut().zip(x.iter()).zip(y.iter()) {
            *gi = 2.0 * self.gamma * (xi - yi) * k;
        }
        Ok(g)
    }

    /// Pairwise kernel matrix [K(x_i, x_j)] of a particle set.
    pub fn gram(&self, points: ArrayView2<f64>) -> Array2<f64> {
        let m = points.nrows();
        let mut g = Array2::<f64>::zeros((m, m));
        for i in 0..m {
            g[[i, i]] = 1.0;
            for j in (i + 1)..m {
                let v = (-self.gamma * sq_dist(points.row(i), points.row(j))).exp();
                g[[i, j]] = v;
                g[[j, i]] = v;
            }
        }
        g
    }

    /// Kernel rescaled by the median heuristic: gamma' chosen so that
    /// gamma' * med^2 = 1/2, with `med` the median pairwise distance.
    /// Falls back to the fixed gamma for a single particle.
    pub fn with_median_bandwidth(&self, points: ArrayView2<f64>) -> RbfKernel {
        let m = points.nrows();
        if m < 2 {
            return *self;
        }
        let mut dists = Vec::with_capacity(m * (m - 1) / 2);
        for i in 0..m {
            for j in (i + 1)..m {
                dists.push(sq_dist(points.row(i), points.row(j)));
            }
        }
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med_sq = dists[dists.len() / 2];
        if med_sq <= 0.0 {
            return *self;
        }
        RbfKernel {
            gamma: 0.5 / med_sq,
        }
    }
}

fn sq_dist(x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    x.iter()
        .zip(y.iter())
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum()
}
