//! Per-iteration diagnostic records.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One iteration's diagnostics. `per_objective_value` holds the estimated
/// functional values where they are computable and `None` (serialized as
/// null) where they are not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub weights: Vec<f64>,
    /// min over the simplex of w^T G w at this iteration.
    pub stationarity: f64,
    /// w^T G w at the weights actually used this iteration.
    pub grad_norm_sq: f64,
    pub per_objective_value: Vec<Option<f64>>,
}

impl TraceRecord {
    pub fn new(
        iter: usize,
        weights: Vec<f64>,
        stationarity: f64,
        grad_norm_sq: f64,
        per_objective_value: Vec<Option<f64>>,
    ) -> Result<Self> {
        if !(stationarity >= 0.0) || !stationarity.is_finite() {
            return Err(Error::invalid(format!(
                "stationarity must be finite and non-negative, got {stationarity}"
            )));
        }
        if !(grad_norm_sq >= 0.0) || !grad_norm_sq.is_finite() {
            return Err(Error::invalid(format!(
                "grad_norm_sq must be finite and non-negative, got {grad_norm_sq}"
            )));
        }
        // The simplex minimum cannot exceed the value at the current weights.
        if stationarity > grad_norm_sq + 1e-9 {
            return Err(Error::invalid(format!(
                "stationarity {stationarity} exceeds grad_norm_sq {grad_norm_sq}"
            )));
        }
        Ok(TraceRecord {
            iter,
            weights,
            stationarity,
            grad_norm_sq,
            per_objective_value,
        })
    }
}
