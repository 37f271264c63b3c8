use clap::{Parser, Subcommand};

use equiv_assembly::harness::{
    cmd_check_equivariance, cmd_eval, cmd_generate, cmd_train, Config,
};

/// SE(3)-equivariant geometric shape assembly: data generation, training,
/// evaluation, and the equivariance self-check.
#[derive(Parser)]
#[command(name = "equiv-assembly", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a procedural fracture dataset.
    Generate(CommonArgs),
    /// Train the assembly model on a generated dataset.
    Train(CommonArgs),
    /// Evaluate a checkpoint and print the metric table.
    Eval(EvalArgs),
    /// Measure the architecture's equivariance/invariance properties.
    CheckEquivariance(CommonArgs),
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Path to a flat JSON config; defaults apply when omitted.
    #[arg(long)]
    config: Option<String>,
    /// Trailing `--key value` pairs override config fields.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<String>,
    /// Checkpoint to evaluate; defaults to `<checkpoint_dir>/latest.eqas`.
    #[arg(long)]
    checkpoint: Option<String>,
    /// Dataset to evaluate on; defaults to `eval_dataset_dir` or `dataset_dir`.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

fn load_config(path: &Option<String>, overrides: &[String]) -> Result<Config, String> {
    let mut config = match path {
        Some(p) => Config::load(p).map_err(|e| e.to_string())?,
        None => Config::default(),
    };
    let mut it = overrides.iter();
    while let Some(key) = it.next() {
        let key = key
            .strip_prefix("--")
            .ok_or_else(|| format!("override {key:?} must look like --key value"))?;
        let value = it
            .next()
            .ok_or_else(|| format!("override --{key} is missing its value"))?;
        config
            .apply_override(key, value)
            .map_err(|e| e.to_string())?;
    }
    Ok(config)
}

fn run() -> Result<(), String> {
    match Cli::parse().command {
        Command::Generate(args) => {
            let config = load_config(&args.config, &args.overrides)?;
            cmd_generate(&config).map_err(|e| e.to_string())?;
        }
        Command::Train(args) => {
            let config = load_config(&args.config, &args.overrides)?;
            let outcome = cmd_train(&config).map_err(|e| e.to_string())?;
            eprintln!("final checkpoint: {}", outcome.checkpoint.display());
        }
        Command::Eval(args) => {
            let config = load_config(&args.config, &args.overrides)?;
            let checkpoint = args
                .checkpoint
                .unwrap_or_else(|| format!("{}/latest.eqas", config.checkpoint_dir));
            let dataset = args.dataset.unwrap_or_else(|| {
                if config.eval_dataset_dir.is_empty() {
                    config.dataset_dir.clone()
                } else {
                    config.eval_dataset_dir.clone()
                }
            });
            cmd_eval(&config, &checkpoint, &dataset).map_err(|e| e.to_string())?;
        }
        Command::CheckEquivariance(args) => {
            let config = load_config(&args.config, &args.overrides)?;
            let report = cmd_check_equivariance(&config).map_err(|e| e.to_string())?;
            if !report.all_pass() {
                return Err("equivariance suite failed".to_string());
            }
        }
    }
    Ok(())
}

fn main() {
    if let Err(message) = run() {
        eprintln!("error: {message}");
        std::process::exit(1);
    }
}
