//! Aggregation weights on the probability simplex.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of the probability simplex: entries are non-negative and sum to
/// one (within 1e-10).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimplexWeights(Vec<f64>);

impl SimplexWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::invalid("weights must have at least one entry"));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("simplex weights".into()));
        }
        if w.iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("simplex weights must be non-negative"));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-10 {
            return Err(Error::invalid(format!(
                "simplex weights must sum to 1, got {sum}"
            )));
        }
        Ok(SimplexWeights(w))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false // length >= 1 by construction
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for SimplexWeights {
    type Output = f64;

    fn index(&self, k: usize) -> &f64 {
        &self.0[k]
    }
}

/// Uniform starting weights (1/K, ..., 1/K).
pub fn init_weights(num_objectives: usize) -> Result<SimplexWeights> {
    if num_objectives == 0 {
        return Err(Error::invalid("number of objectives must be >= 1"));
    }
    Ok(SimplexWeights(vec![
        1.0 / num_objectives as f64;
        num_objectives
    ]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_objective_is_one() {
        assert_eq!(init_weights(1).unwrap().as_slice(), &[1.0]);
    }

    #[test]
    fn four_objectives_are_quarters() {
        assert_eq!(init_weights(4).unwrap().as_slice(), &[0.25; 4]);
    }

    #[test]
    fn three_objectives_sum_to_one() {
        let w = init_weights(3).unwrap();
        let sum: f64 = w.as_slice().iter().sum();
        assert!((sum - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn zero_objectives_is_an_error() {
        assert!(init_weights(0).is_err());
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(SimplexWeights::new(vec![]).is_err());
        assert!(SimplexWeights::new(vec![0.5, 0.6]).is_err());
        assert!(SimplexWeights::new(vec![-0.1, 1.1]).is_err());
        assert!(SimplexWeights::new(vec![f64::NAN, 1.0]).is_err());
    }
}
