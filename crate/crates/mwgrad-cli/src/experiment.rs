//! Experiment configuration, presets and file outputs.
//!
//! An experiment is a serialized [`ExperimentConfig`]: the optimizer's
//! `RunConfig` fields (flattened) plus an objective specification and an
//! output directory. Running one writes `trace.jsonl` (one JSON record per
//! iteration), `particles_<iter>.csv` snapshots and `meta.json`, the fully
//! resolved config that reproduces the run byte for byte when fed back in.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use mwgrad::{
    draw_target_samples, four_mixture_targets, rng, Divergence, EnergyObjective,
    GaussianComponent, GaussianMixture, Method, Objective, RunConfig, RunOutput, SampleObjective,
};

/// Failure category, mapped to the process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Config parse or validation problem (exit status 2).
    Config,
    /// The optimization itself failed (exit status 3).
    Runtime,
    /// Output files could not be written (exit status 4).
    Io,
}

impl ErrorKind {
    pub fn exit_status(&self) -> u8 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Runtime => 3,
            ErrorKind::Io => 4,
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            ErrorKind::Config => "config",
            ErrorKind::Runtime => "runtime",
            ErrorKind::Io => "io",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind.category(), self.message)
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            kind: ErrorKind::Config,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CliError {
            kind: ErrorKind::Runtime,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        CliError {
            kind: ErrorKind::Io,
            message: message.into(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// One Gaussian component given inline in a config file. A missing
/// covariance means the identity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub weight: f64,
    pub mean: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub components: Vec<ComponentSpec>,
}

/// What the objectives are: exactly one of a named preset, inline mixtures,
/// or sample files with a divergence tag.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixtures: Option<Vec<MixtureSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_files: Option<Vec<PathBuf>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divergence: Option<Divergence>,
}

impl ObjectiveSpec {
    fn validate(&self) -> CliResult<()> {
        let given = [
            self.preset.is_some(),
            self.mixtures.is_some(),
            self.sample_files.is_some(),
        ]
        .iter()
        .filter(|b| **b)
        .count();
        if given != 1 {
            return Err(CliError::config(
                "objectives must set exactly one of {preset, mixtures, sample_files}",
            ));
        }
        if self.sample_files.is_some() && self.divergence.is_none() {
            return Err(CliError::config(
                "sample_files objectives need a divergence tag (kl or js)",
            ));
        }
        if self.sample_files.is_none() && self.divergence.is_some() {
            return Err(CliError::config(
                "divergence is only meaningful with sample_files objectives",
            ));
        }
        Ok(())
    }
}

/// Serialized experiment description: run settings plus objectives.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub run: RunConfig,
    pub objectives: ObjectiveSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Version of the binary that produced a meta.json; accepted and
    /// ignored when a meta.json is replayed as a config.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
}

/// Names accepted by `--preset` and `objectives.preset`.
pub const PRESETS: [&str; 4] = [
    "paper-energy",
    "paper-4-targets",
    "paper-samples-kl",
    "paper-samples-js",
];

impl ExperimentConfig {
    /// A named preset: the four-target synthetic setup with the published
    /// step sizes, particle count and iteration budget. `paper-energy` runs
    /// kernelized estimators on the closed-form targets; the `paper-samples`
    /// presets represent every target by 30 drawn samples and use the
    /// variational critic.
    pub fn preset(name: &str) -> CliResult<Self> {
        let run = RunConfig::default();
        match name {
            "paper-energy" | "paper-4-targets" => Ok(ExperimentConfig {
                run,
                objectives: ObjectiveSpec {
                    preset: Some(name.to_string()),
                    ..ObjectiveSpec::default()
                },
                out_dir: None,
                version: None,
            }),
            "paper-samples-kl" | "paper-samples-js" => Ok(ExperimentConfig {
                run: RunConfig {
                    method: Method::MwgradNn,
                    ..run
                },
                objectives: ObjectiveSpec {
                    preset: Some(name.to_string()),
                    ..ObjectiveSpec::default()
                },
                out_dir: None,
                version: None,
            }),
            other => Err(CliError::config(format!(
                "unknown preset '{other}'; available: {}",
                PRESETS.join(", ")
            ))),
        }
    }

    /// Materializes the objective list. The number of objectives in the run
    /// config is derived from the list.
    pub fn resolve(&self) -> CliResult<(RunConfig, Vec<Objective>)> {
        self.objectives.validate()?;
        let objectives = if let Some(name) = &self.objectives.preset {
            preset_objectives(name, self.run.seed)?
        } else if let Some(mixtures) = &self.objectives.mixtures {
            mixtures
                .iter()
                .map(build_energy_objective)
                .collect::<CliResult<Vec<_>>>()?
        } else {
            let files = self.objectives.sample_files.as_ref().unwrap();
            let divergence = self.objectives.divergence.unwrap();
            files
                .iter()
                .map(|p| load_sample_objective(p, divergence))
                .collect::<CliResult<Vec<_>>>()?
        };
        if objectives.is_empty() {
            return Err(CliError::config("objective list is empty"));
        }
        let mut run = self.run.clone();
        run.num_objectives = objectives.len();
        if let Some(first) = objectives.first() {
            run.dim = first.dim();
        }
        run.validate()
            .map_err(|e| CliError::config(e.to_string()))?;
        Ok((run, objectives))
    }
}

fn preset_objectives(name: &str, seed: u64) -> CliResult<Vec<Objective>> {
    let targets = four_mixture_targets();
    match name {
        "paper-energy" | "paper-4-targets" => Ok(targets
            .into_iter()
            .map(|t| Objective::Energy(EnergyObjective::new(t)))
            .collect()),
        "paper-samples-kl" | "paper-samples-js" => {
            let divergence = if name.ends_with("kl") {
                Divergence::Kl
            } else {
                Divergence::Js
            };
            targets
                .iter()
                .enumerate()
                .map(|(k, t)| {
                    let mut gen = rng::substream(seed, "target-samples", k, 0);
                    let samples = draw_target_samples(t, 30, &mut gen)
                        .map_err(|e| CliError::config(e.to_string()))?;
                    SampleObjective::new(samples, divergence)
                        .map(Objective::Samples)
                        .map_err(|e| CliError::config(e.to_string()))
                })
                .collect()
        }
        other => Err(CliError::config(format!("unknown preset '{other}'"))),
    }
}

fn build_energy_objective(spec: &MixtureSpec) -> CliResult<Objective> {
    let components = spec
        .components
        .iter()
        .map(|c| {
            let mean = Array1::from_vec(c.mean.clone());
            let d = mean.len();
            let cov = match &c.covariance {
                None => Array2::eye(d),
                Some(rows) => {
                    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                        return Err(CliError::config(format!(
                            "covariance must be {d}x{d} to match the mean"
                        )));
                    }
                    let mut cov = Array2::zeros((d, d));
                    for (i, row) in rows.iter().enumerate() {
                        for (j, v) in row.iter().enumerate() {
                            cov[[i, j]] = *v;
                        }
                    }
                    cov
                }
            };
            GaussianComponent::new(c.weight, mean, cov)
                .map_err(|e| CliError::config(e.to_string()))
        })
        .collect::<CliResult<Vec<_>>>()?;
    GaussianMixture::new(components)
        .map(|m| Objective::Energy(EnergyObjective::new(m)))
        .map_err(|e| CliError::config(e.to_string()))
}

fn load_sample_objective(path: &Path, divergence: Divergence) -> CliResult<Objective> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::config(format!("cannot read samples from {path:?}: {e}")))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record =
            record.map_err(|e| CliError::config(format!("malformed CSV in {path:?}: {e}")))?;
        let row = record
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| CliError::config(format!("non-numeric sample in {path:?}: {e}")))?;
        rows.push(row);
    }
    let n = rows.len();
    let d = rows.first().map(|r| r.len()).unwrap_or(0);
    if n == 0 || d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(CliError::config(format!(
            "sample file {path:?} must be a non-empty rectangular table"
        )));
    }
    let mut data = Array2::zeros((n, d));
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            data[[i, j]] = *v;
        }
    }
    SampleObjective::new(data, divergence)
        .map(Objective::Samples)
        .map_err(|e| CliError::config(e.to_string()))
}

fn runtime_error(e: mwgrad::Error) -> CliError {
    match e {
        mwgrad::Error::InvalidArgument(_) | mwgrad::Error::NonFinite(_) => {
            CliError::config(e.to_string())
        }
        other => CliError::runtime(other.to_string()),
    }
}

/// Runs one experiment and writes `trace.jsonl`, particle snapshots and
/// `meta.json` into the output directory. Nothing is written until the
/// config has validated and resolved.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> CliResult<RunOutput> {
    let (run_config, objectives) = config.resolve()?;
    let output = mwgrad::run(&run_config, &objectives).map_err(runtime_error)?;

    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::io(format!("cannot create {out_dir:?}: {e}")))?;
    write_trace(&output, &out_dir.join("trace.jsonl"))?;
    for (iter, particles) in &output.snapshots {
        write_particles(particles, &out_dir.join(format!("particles_{iter}.csv")))?;
    }
    let mut resolved = config.clone();
    resolved.run = run_config;
    resolved.out_dir = Some(out_dir.to_path_buf());
    resolved.version = Some(format!("mwgrad {}", env!("CARGO_PKG_VERSION")));
    let meta = serde_json::to_string_pretty(&resolved)
        .map_err(|e| CliError::io(format!("cannot serialize meta.json: {e}")))?;
    fs::write(out_dir.join("meta.json"), meta + "\n")
        .map_err(|e| CliError::io(format!("cannot write meta.json: {e}")))?;
    Ok(output)
}

fn write_trace(output: &RunOutput, path: &Path) -> CliResult<()> {
    let mut buf = String::new();
    for record in &output.trace {
        let line = serde_json::to_string(record)
            .map_err(|e| CliError::io(format!("cannot serialize trace record: {e}")))?;
        buf.push_str(&line);
        buf.push('\n');
    }
    fs::write(path, buf).map_err(|e| CliError::io(format!("cannot write {path:?}: {e}")))
}

fn write_particles(particles: &mwgrad::ParticleSet, path: &Path) -> CliResult<()> {
    let mut buf = String::new();
    let header: Vec<String> = (0..particles.dim()).map(|c| format!("x{c}")).collect();
    buf.push_str(&header.join(","));
    buf.push('\n');
    for i in 0..particles.len() {
        let row: Vec<String> = particles.particle(i).iter().map(|v| v.to_string()).collect();
        buf.push_str(&row.join(","));
        buf.push('\n');
    }
    fs::write(path, buf).map_err(|e| CliError::io(format!("cannot write {path:?}: {e}")))
}

/// One row of a method-comparison summary.
#[derive(Debug, Clone)]
pub struct MethodSummary {
    pub method: Method,
    pub outcome: Result<(f64, f64, f64), String>,
}

/// Runs each method on the same config and seed and writes `summary.csv`
/// with columns {method, final_mean_dist_to_origin, final_stationarity,
/// wallclock_seconds}. A failing method marks its row failed and the
/// comparison continues.
pub fn compare_methods(
    config: &ExperimentConfig,
    methods: &[Method],
    out_dir: &Path,
) -> CliResult<Vec<MethodSummary>> {
    if methods.is_empty() {
        return Err(CliError::config("compare needs at least one method"));
    }
    let mut rows = Vec::with_capacity(methods.len());
    for &method in methods {
        let mut per_method = config.clone();
        per_method.run.method = method;
        let started = Instant::now();
        let outcome = per_method
            .resolve()
            .and_then(|(run_config, objectives)| {
                mwgrad::run(&run_config, &objectives).map_err(runtime_error)
            })
            .map(|output| {
                let wallclock = started.elapsed().as_secs_f64();
                let mean_dist = mean_distance_to_origin(&output.final_state.particles);
                let stationarity = output.trace.last().map(|r| r.stationarity).unwrap_or(0.0);
                (mean_dist, stationarity, wallclock)
            })
            .map_err(|e| e.to_string());
        rows.push(MethodSummary { method, outcome });
    }
    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::io(format!("cannot create {out_dir:?}: {e}")))?;
    let path = out_dir.join("summary.csv");
    let mut file = fs::File::create(&path)
        .map_err(|e| CliError::io(format!("cannot write {path:?}: {e}")))?;
    let mut body =
        String::from("method,final_mean_dist_to_origin,final_stationarity,wallclock_seconds\n");
    for row in &rows {
        match &row.outcome {
            Ok((dist, stat, wall)) => {
                body.push_str(&format!("{},{},{},{}\n", row.method, dist, stat, wall));
            }
            Err(_) => {
                body.push_str(&format!("{},failed,failed,failed\n", row.method));
            }
        }
    }
    file.write_all(body.as_bytes())
        .map_err(|e| CliError::io(format!("cannot write {path:?}: {e}")))?;
    Ok(rows)
}

pub fn mean_distance_to_origin(particles: &mwgrad::ParticleSet) -> f64 {
    let m = particles.len() as f64;
    (0..particles.len())
        .map(|i| {
            particles
                .particle(i)
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt()
        })
        .sum::<f64>()
        / m
}

/// Loads a config file and applies `key=value` overrides (dotted paths into
/// the JSON document; values parse as JSON scalars when possible, else as
/// strings).
pub fn load_config(path: &Path, overrides: &[(String, String)]) -> CliResult<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read config {path:?}: {e}")))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("config {path:?} is not valid JSON: {e}")))?;
    apply_overrides(value, overrides)
}

/// Serializes a config back to a JSON document, applies overrides and
/// reparses.
pub fn apply_overrides(
    base: serde_json::Value,
    overrides: &[(String, String)],
) -> CliResult<ExperimentConfig> {
    let mut value = base;
    for (key, raw) in overrides {
        let parsed: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.clone()));
        let parts: Vec<&str> = key.split('.').collect();
        let (last, parents) = parts.split_last().expect("split produces at least one part");
        let mut cursor = &mut value;
        for part in parents {
            let map = match cursor {
                serde_json::Value::Object(map) => map,
                _ => {
                    return Err(CliError::config(format!(
                        "override path '{key}' does not address an object"
                    )))
                }
            };
            cursor = map
                .entry(part.to_string())
                .or_insert_with(|| serde_json::Value::Object(Default::default()));
        }
        match cursor {
            serde_json::Value::Object(map) => {
                map.insert(last.to_string(), parsed);
            }
            _ => {
                return Err(CliError::config(format!(
                    "override path '{key}' does not address an object"
                )))
            }
        }
    }
    serde_json::from_value(value).map_err(|e| CliError::config(format!("invalid config: {e}")))
}

pub fn config_to_value(config: &ExperimentConfig) -> CliResult<serde_json::Value> {
    serde_json::to_value(config).map_err(|e| CliError::config(e.to_string()))
}
