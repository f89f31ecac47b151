//! Batch command surface: generate corpora, train, evaluate, and report.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wapat::config::RunConfig;
use wapat::pipeline;
use wapat::trainer::TrainMode;

#[derive(Parser)]
#[command(
    name = "wapat",
    about = "Adversarial training laboratory for CTC speech recognition on synthetic cross-domain corpora",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration file (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output directory for corpora, checkpoints, and reports.
    #[arg(long, default_value = "runs/default")]
    out: PathBuf,

    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Cap the worker pool (1 and N produce identical artifacts).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/val/test and the five held-out domain corpora.
    Generate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train a model on the generated training split.
    Train {
        #[command(flatten)]
        common: CommonArgs,

        /// Override train.mode (no_at, pat, wapat, waveform_at).
        #[arg(long)]
        mode: Option<TrainMode>,

        /// Override attack.epsilon.
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Score a checkpoint over the generated evaluation suites.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,

        /// Checkpoint to evaluate (defaults to <out>/checkpoint.bin).
        #[arg(long)]
        checkpoint: Option<PathBuf>,

        /// Baseline wer.csv; when given, a drop.csv is also written.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Drop-rate table comparing two wer.csv files.
    Report {
        /// Baseline wer.csv.
        #[arg(long)]
        baseline: PathBuf,

        /// Treated wer.csv.
        #[arg(long)]
        treated: PathBuf,

        /// Output directory for drop.csv.
        #[arg(long, default_value = "runs/default")]
        out: PathBuf,
    },
}

fn load_config(common: &CommonArgs) -> wapat::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = common.threads {
        if threads == 0 {
            return Err(wapat::Error::InvalidArg("--threads must be >= 1".into()));
        }
        wapat::par::configure_threads(threads)
            .map_err(|e| wapat::Error::InvalidArg(format!("--threads: {e}")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run() -> wapat::Result<()> {
    match Cli::parse().command {
        Command::Generate { common } => {
            let cfg = load_config(&common)?;
            let manifests = pipeline::cmd_generate(&cfg, &common.out)?;
            println!("wrote {} corpora under {}", manifests.len(), common.out.display());
        }
        Command::Train {
            common,
            mode,
            epsilon,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(mode) = mode {
                cfg.train.mode = mode;
            }
            if let Some(epsilon) = epsilon {
                cfg.attack.epsilon = epsilon;
                cfg.attack.alpha = epsilon; // single-step convention
            }
            cfg.validate()?;
            let summary = pipeline::cmd_train(&cfg, &common.out)?;
            println!("{}", summary.line());
        }
        Command::Evaluate {
            common,
            checkpoint,
            baseline,
        } => {
            let cfg = load_config(&common)?;
            let checkpoint = checkpoint.unwrap_or_else(|| common.out.join("checkpoint.bin"));
            let result =
                pipeline::cmd_evaluate(&cfg, &checkpoint, &common.out, baseline.as_deref())?;
            println!(
                "in_domain_wer={:.4}% macro_ood_wer={:.4}% decode_failures={}",
                100.0 * result.in_domain,
                100.0 * result.macro_score,
                result.decode_failures
            );
        }
        Command::Report {
            baseline,
            treated,
            out,
        } => {
            let table = pipeline::cmd_report(&baseline, &treated, &out)?;
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
