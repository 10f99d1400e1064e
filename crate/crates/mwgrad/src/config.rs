//! Run configuration and validation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Particle-update method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    MwgradSvgd,
    MwgradBlob,
    MwgradNn,
    MooSvgd,
    MtSgd,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::MwgradSvgd,
        Method::MwgradBlob,
        Method::MwgradNn,
        Method::MooSvgd,
        Method::MtSgd,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::MwgradSvgd => "mwgrad-svgd",
            Method::MwgradBlob => "mwgrad-blob",
            Method::MwgradNn => "mwgrad-nn",
            Method::MooSvgd => "moo-svgd",
            Method::MtSgd => "mt-sgd",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mwgrad-svgd" => Ok(Method::MwgradSvgd),
            "mwgrad-blob" => Ok(Method::MwgradBlob),
            "mwgrad-nn" => Ok(Method::MwgradNn),
            "moo-svgd" => Ok(Method::MooSvgd),
            "mt-sgd" => Ok(Method::MtSgd),
            other => Err(Error::invalid(format!("unknown method '{other}'"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Whether a particle sum is used as printed or divided by the particle count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    Sum,
    Mean,
}

/// Kernel bandwidth selection rule. `Fixed` uses `kernel_gamma` unchanged;
/// `Median` rescales it each step from the median pairwise distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthRule {
    Fixed,
    Median,
}

/// Settings for the variational critic networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnSettings {
    /// Hidden layer widths.
    pub hidden: Vec<usize>,
    /// Gradient-ascent steps per outer iteration.
    pub train_steps: usize,
    /// Gradient-ascent step size.
    pub train_step_size: f64,
    /// Draws from the base distribution per iteration (energy targets only).
    pub reference_samples: usize,
}

impl Default for NnSettings {
    fn default() -> Self {
        NnSettings {
            hidden: vec![50, 50],
            train_steps: 20,
            train_step_size: 1e-2,
            reference_samples: 100,
        }
    }
}

/// Full configuration of one optimization run. Fields omitted from a
/// serialized config fall back to the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub num_particles: usize,
    pub dim: usize,
    pub num_objectives: usize,
    pub step_size_alpha: f64,
    pub step_size_beta: f64,
    pub num_iterations: usize,
    pub kernel_gamma: f64,
    pub method: Method,
    pub seed: u64,
    #[serde(default)]
    pub nn: NnSettings,
    pub gram_normalization: Normalization,
    #[serde(default = "default_svgd_normalization")]
    pub svgd_normalization: Normalization,
    #[serde(default = "default_bandwidth_rule")]
    pub bandwidth: BandwidthRule,
    pub snapshot_every: usize,
}

fn default_svgd_normalization() -> Normalization {
    Normalization::Sum
}

fn default_bandwidth_rule() -> BandwidthRule {
    BandwidthRule::Fixed
}

impl Default for RunConfig {
    /// Defaults match the synthetic multi-target experiments: 50 particles in
    /// the plane, four objectives, alpha 1e-4, beta 1e-3, gamma 0.01, 2000
    /// iterations, critics with two hidden layers of width 50 trained for 20
    /// steps per iteration.
    fn default() -> Self {
        RunConfig {
            num_particles: 50,
            dim: 2,
            num_objectives: 4,
            step_size_alpha: 1e-4,
            step_size_beta: 1e-3,
            num_iterations: 2000,
            kernel_gamma: 0.01,
            method: Method::MwgradSvgd,
            seed: 0,
            nn: NnSettings::default(),
            gram_normalization: Normalization::Sum,
            svgd_normalization: Normalization::Sum,
            bandwidth: BandwidthRule::Fixed,
            snapshot_every: 200,
        }
    }
}

impl RunConfig {
    /// Checks every invariant the rest of the crate relies on.
    pub fn validate(&self) -> Result<()> {
        if self.num_particles == 0 {
            return Err(Error::invalid("num_particles must be >= 1"));
        }
        if self.dim == 0 {
            return Err(Error::invalid("dim must be >= 1"));
        }
        if self.num_objectives == 0 {
            return Err(Error::invalid("num_objectives must be >= 1"));
        }
        if !(self.step_size_alpha > 0.0) || !self.step_size_alpha.is_finite() {
            return Err(Error::invalid("step_size_alpha must be positive and finite"));
        }
        if !(self.step_size_beta > 0.0) || !self.step_size_beta.is_finite() {
            return Err(Error::invalid("step_size_beta must be positive and finite"));
        }
        if self.num_iterations == 0 {
            return Err(Error::invalid("num_iterations must be >= 1"));
        }
        if !(self.kernel_gamma > 0.0) || !self.kernel_gamma.is_finite() {
            return Err(Error::invalid("kernel_gamma must be positive and finite"));
        }
        if self.snapshot_every == 0 {
            return Err(Error::invalid("snapshot_every must be >= 1"));
        }
        if self.nn.hidden.is_empty() || self.nn.hidden.iter().any(|&w| w == 0) {
            return Err(Error::invalid("nn.hidden widths must all be >= 1"));
        }
        if self.nn.train_steps == 0 {
            return Err(Error::invalid("nn.train_steps must be >= 1"));
        }
        if !(self.nn.train_step_size > 0.0) || !self.nn.train_step_size.is_finite() {
            return Err(Error::invalid("nn.train_step_size must be positive and finite"));
        }
        if self.nn.reference_samples == 0 {
            return Err(Error::invalid("nn.reference_samples must be >= 1"));
        }
        Ok(())
    }
}
