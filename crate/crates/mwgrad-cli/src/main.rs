use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mwgrad::Method;
use mwgrad_cli::experiment::{
    apply_overrides, compare_methods, config_to_value, load_config, run_experiment, CliError,
    CliResult, ExperimentConfig, PRESETS,
};

#[derive(Parser, Debug)]
#[command(
    name = "mwgrad",
    version,
    about = "Particle sampler that minimizes several distributional objectives at once",
    long_about = None
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one experiment and write trace.jsonl, particle snapshots and
    /// meta.json (default when no subcommand is given).
    Run(RunArgs),
    /// Run several methods on the same config and seed and write a
    /// summary.csv with final metrics per method.
    Compare(CompareArgs),
}

#[derive(Args, Debug, Clone)]
struct CommonArgs {
    /// Path to an experiment config (JSON). A meta.json from a previous run
    /// replays that run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in experiment preset (paper-energy, paper-samples-kl,
    /// paper-samples-js).
    #[arg(long)]
    preset: Option<String>,
    /// Particle-update method.
    #[arg(long)]
    method: Option<Method>,
    /// Root seed for all random draws.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (defaults to the config's out_dir, else "runs").
    #[arg(long = "out-dir")]
    out_dir: Option<PathBuf>,
    /// Particle snapshot cadence in iterations.
    #[arg(long = "snapshot-every")]
    snapshot_every: Option<usize>,
    /// Override any config field by dotted path, e.g. --set kernel_gamma=0.02
    /// or --set nn.train_steps=40. Repeatable.
    #[arg(long = "set", value_parser = parse_key_value)]
    set: Vec<(String, String)>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated list of methods to compare.
    #[arg(long, value_delimiter = ',', required = true)]
    methods: Vec<Method>,
}

fn parse_key_value(raw: &str) -> Result<(String, String), String> {
    match raw.split_once('=') {
        Some((k, v)) if !k.is_empty() => Ok((k.to_string(), v.to_string())),
        _ => Err(format!("expected key=value, got '{raw}'")),
    }
}

fn resolve_config(common: &CommonArgs) -> CliResult<ExperimentConfig> {
    let mut overrides: Vec<(String, String)> = Vec::new();
    if let Some(method) = common.method {
        overrides.push(("method".into(), method.as_str().into()));
    }
    if let Some(seed) = common.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Some(every) = common.snapshot_every {
        overrides.push(("snapshot_every".into(), every.to_string()));
    }
    overrides.extend(common.set.iter().cloned());

    let config = match (&common.config, &common.preset) {
        (Some(_), Some(_)) => {
            return Err(CliError::config(
                "--config and --preset are mutually exclusive",
            ))
        }
        (Some(path), None) => load_config(path, &overrides)?,
        (None, Some(name)) => {
            let base = config_to_value(&ExperimentConfig::preset(name)?)?;
            apply_overrides(base, &overrides)?
        }
        (None, None) => {
            return Err(CliError::config(format!(
                "nothing to run: pass --config <path> or --preset <name> (presets: {})",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(config)
}

fn out_dir(common: &CommonArgs, config: &ExperimentConfig) -> PathBuf {
    common
        .out_dir
        .clone()
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn run(args: &RunArgs) -> CliResult<()> {
    let config = resolve_config(&args.common)?;
    let dir = out_dir(&args.common, &config);
    let output = run_experiment(&config, &dir)?;
    let last = output.trace.last().expect("at least one iteration");
    println!(
        "wrote {} iterations to {} (final stationarity {:.6e})",
        output.trace.len(),
        dir.display(),
        last.stationarity
    );
    Ok(())
}

fn compare(args: &CompareArgs) -> CliResult<()> {
    let config = resolve_config(&args.common)?;
    let dir = out_dir(&args.common, &config);
    let rows = compare_methods(&config, &args.methods, &dir)?;
    println!("wrote {} to {}", "summary.csv", dir.display());
    for row in &rows {
        match &row.outcome {
            Ok((dist, stat, wall)) => println!(
                "{}: mean_dist {:.4} stationarity {:.6e} ({:.1}s)",
                row.method, dist, stat, wall
            ),
            Err(e) => println!("{}: failed ({e})", row.method),
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // Bare flags mean `run`.
    let mut argv: Vec<String> = std::env::args().collect();
    if argv
        .get(1)
        .map(|a| a.starts_with('-') && a != "--help" && a != "-h" && a != "--version")
        .unwrap_or(false)
    {
        argv.insert(1, "run".to_string());
    }
    let cli = Cli::parse_from(argv);
    let result = match &cli.command {
        Command::Run(args) => run(args),
        Command::Compare(args) => compare(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({
                "error": e.kind.category(),
                "message": e.message,
            });
            eprintln!("{line}");
            ExitCode::from(e.kind.exit_status())
        }
    }
}
