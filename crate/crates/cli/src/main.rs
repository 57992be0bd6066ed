use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use losstrace_cli::pipeline::{self, Outcome};
use losstrace_cli::{CliError, ExperimentConfig, Overrides};

/// Loss-trace vulnerability experiments: data, training, scoring, attacks and reports.
#[derive(Debug, Parser)]
#[command(name = "losstrace", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (TOML); the bundled desk-scale config when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory; overrides `output_dir` from the config.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Process only this experiment seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Target false positive rates (comma separated).
    #[arg(long, global = true, value_delimiter = ',', value_name = "A")]
    alpha: Vec<f64>,

    /// k as fractions of the member set (comma separated).
    #[arg(long, global = true, value_delimiter = ',', value_name = "K")]
    k: Vec<f64>,

    /// Attacks to run: loss, lira, attack_r, rmia (comma separated).
    #[arg(long, global = true, value_delimiter = ',', value_name = "NAME")]
    attack: Vec<String>,

    /// Aggregators, e.g. iqr, iqr:0.1:0.9, mean, lp:3, slope, delta:5 (comma separated).
    #[arg(long, global = true, value_delimiter = ',', value_name = "SPEC")]
    aggregator: Vec<String>,

    /// Number of shadow runs.
    #[arg(long, global = true, value_name = "N")]
    shadows: Option<usize>,

    /// Per-sample gradient clipping norm C for DP-SGD.
    #[arg(long = "dp-clip", global = true, value_name = "C")]
    dp_clip: Option<f64>,

    /// DP-SGD noise multiplier σ (noise std is σ·C).
    #[arg(long = "dp-noise", global = true, value_name = "S")]
    dp_noise: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    GenData,
    /// Train one target model per seed, recording loss traces.
    Train,
    /// Train the shadow models and assemble the shadow panel.
    TrainShadows,
    /// Score target members with every aggregator and baseline.
    Score,
    /// Run the attacks and label vulnerable points.
    Attack,
    /// Compare predictors against the vulnerable sets.
    Evaluate,
    /// Sweep the LT-IQR quantile grid.
    Ablate,
    /// Render ROC and precision@k plots with their CSVs.
    Report,
    /// Run every stage in order.
    Run,
    /// Print the effective config as TOML.
    ShowConfig,
}

impl Command {
    fn stage(&self) -> Option<&'static str> {
        Some(match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::TrainShadows => "train-shadows",
            Command::Score => "score",
            Command::Attack => "attack",
            Command::Evaluate => "evaluate",
            Command::Ablate => "ablate",
            Command::Report => "report",
            Command::Run | Command::ShowConfig => return None,
        })
    }
}

fn execute(cli: Cli) -> Result<Outcome, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::bundled(),
    };
    let overrides = Overrides {
        out: cli.out,
        seed: cli.seed,
        alphas: cli.alpha,
        k_fractions: cli.k,
        attacks: cli.attack,
        aggregators: cli.aggregator,
        shadows: cli.shadows,
        dp_clip: cli.dp_clip,
        dp_noise: cli.dp_noise,
    };
    overrides.apply(&mut cfg)?;
    match cli.command.stage() {
        Some(stage) => pipeline::run_stage(stage, &cfg),
        None if matches!(cli.command, Command::Run) => pipeline::run_all(&cfg),
        None => {
            print!("{}", cfg.to_toml_string());
            Ok(Outcome::default())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(outcome) => {
            for m in &outcome.messages {
                println!("{m}");
            }
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
