//! Particle storage for the empirical distribution.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::rng;

/// m particles in d dimensions representing the current empirical
/// distribution. Immutable after construction; every entry is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    data: Array2<f64>,
}

impl ParticleSet {
    /// Wraps an m x d matrix, rejecting empty shapes and non-finite entries.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::invalid(format!(
                "particle set must be at least 1x1, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("particle coordinates".into()));
        }
        Ok(ParticleSet { data })
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false // m >= 1 by construction
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn particle(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    pub fn into_matrix(self) -> Array2<f64> {
        self.data
    }
}

/// Samples the initial particles from the standard normal distribution.
///
/// Draws are filled row by row from the `"particles"` substream of the
/// config seed, so identical configs yield bitwise-identical particle sets.
pub fn init_particles(config: &RunConfig) -> ParticleSet {
    let mut gen = rng::substream(config.seed, "particles", 0, 0);
    let mut data = Array2::<f64>::zeros((config.num_particles, config.dim));
    for mut row in data.rows_mut() {
        for v in row.iter_mut() {
            *v = gen.sample(StandardNormal);
        }
    }
    ParticleSet { data }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn same_seed_is_bitwise_identical() {
        let mut config = RunConfig::default();
        config.seed = 7;
        let a = init_particles(&config);
        let b = init_particles(&config);
        assert_eq!(a.matrix(), b.matrix());
    }

    #[test]
    fn shape_matches_config() {
        let config = RunConfig {
            num_particles: 50,
            dim: 2,
            ..RunConfig::default()
        };
        let p = init_particles(&config);
        assert_eq!(p.len(), 50);
        assert_eq!(p.dim(), 2);
    }

    #[test]
    fn large_sample_mean_is_near_origin() {
        // Standard-error of the mean at m=10000 is 0.01 per coordinate, so
        // 0.05 is a five-sigma bound.
        let config = RunConfig {
            num_particles: 10_000,
            dim: 2,
            seed: 3,
            ..RunConfig::default()
        };
        let p = init_particles(&config);
        for col in p.matrix().columns() {
            let mean = col.sum() / col.len() as f64;
            assert!(mean.abs() < 0.05, "sample mean {mean} too far from 0");
        }
    }

    #[test]
    fn rejects_non_finite() {
        assert!(ParticleSet::new(array![[f64::NAN, 0.0]]).is_err());
        assert!(ParticleSet::new(array![[f64::INFINITY, 0.0]]).is_err());
    }

    #[test]
    fn rejects_empty() {
        assert!(ParticleSet::new(Array2::zeros((0, 2))).is_err());
    }
}
