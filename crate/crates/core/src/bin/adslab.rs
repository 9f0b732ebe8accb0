//! Command-line entry point: train, eval, bench, gen, stats, verify.
//!
//! Exit codes: 0 success, 1 validation or verification failure, 2 usage error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use adslab_gnn::checkpoint::load_model;
use adslab_gnn::data::{duplicate_target_stats, read_dataset, write_dataset};
use adslab_gnn::eval::{benchmark_throughput, evaluate, EVAL_BATCH_SIZE};
use adslab_gnn::synthetic::{generate_synthetic, InteractionMode, SyntheticConfig};
use adslab_gnn::train::{train_with_progress, TrainConfig};
use adslab_gnn::verify::{parse_scope, verify_with, VerifyOptions};
use adslab_gnn::{Error, Result};

#[derive(Parser)]
#[command(
    name = "adslab",
    version,
    about = "Adsorbate-catalyst energy GNNs with connected and disconnected variants"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a JSON TrainConfig and write the best checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Per-split MAE of a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Write {"id", "pred", "target"} per system as JSON Lines.
        #[arg(long)]
        dump_predictions: Option<PathBuf>,
    },
    /// Forward-pass throughput in samples/s.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 5)]
        reps: usize,
    },
    /// Generate a synthetic dataset.
    Gen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "binding", value_parser = parse_mode)]
        mode: InteractionMode,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_val: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Fraction of systems whose (adsorbate, bulk, cell) group has several targets.
    Stats {
        #[arg(long)]
        data: PathBuf,
    },
    /// Run the invariance, oracle and gradient suites.
    Verify {
        /// `all` or one of: tensor-autodiff, atomic-graph, backbone, variants, data-io, harness-cli.
        #[arg(long, default_value = "all")]
        scope: String,
        #[arg(long, default_value_t = 10)]
        systems: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Negative control: add an adsorbate-catalyst edge to disconnected graphs.
        #[arg(long)]
        inject_cross_edge: bool,
    },
}

fn parse_mode(s: &str) -> std::result::Result<InteractionMode, String> {
    InteractionMode::parse(s).ok_or_else(|| format!("expected separable or binding, got {s:?}"))
}

/// Outcome of a subcommand that ran to completion.
enum Status {
    Ok,
    Failed,
    Usage,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Failed) => ExitCode::from(1),
        Ok(Status::Usage) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run(command: Command) -> Result<Status> {
    match command {
        Command::Train { config } => {
            let text = fs::read_to_string(&config).map_err(|e| Error::io(&config, e))?;
            let mut cfg: TrainConfig = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
            cfg.model = cfg.model.normalized();
            let dataset = read_dataset(&cfg.dataset_path)?;
            let outcome = train_with_progress(&cfg, &dataset, |log| {
                let val = log.val_id_mae.map_or("-".to_string(), |v| format!("{v:.4}"));
                println!(
                    "epoch {:>3}  train_l1 {:.4}  val_id_mae {val}",
                    log.epoch, log.train_loss
                );
            })?;
            outcome.checkpoint().save(&cfg.checkpoint_path)?;
            println!(
                "best epoch {} written to {}",
                outcome.best.epoch,
                cfg.checkpoint_path.display()
            );
        }
        Command::Eval {
            checkpoint,
            data,
            dump_predictions,
        } => {
            let model = load_model(&checkpoint)?;
            let dataset = read_dataset(&data)?;
            let (report, predictions) = evaluate(&model, &dataset)?;
            if let Some(path) = dump_predictions {
                let mut text = String::new();
                for p in &predictions {
                    text.push_str(&serde_json::to_string(p)?);
                    text.push('\n');
                }
                write_text(&path, &text)?;
            }
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Bench { checkpoint, data, reps } => {
            let model = load_model(&checkpoint)?;
            let dataset = read_dataset(&data)?;
            let t = benchmark_throughput(&model, &dataset.systems, reps)?;
            println!(
                "{:.1} ± {:.1} samples/s over {} repetitions (batch size {EVAL_BATCH_SIZE}, {} systems)",
                t.mean,
                t.std,
                t.repetitions.len(),
                t.n_samples
            );
            println!("{}", serde_json::to_string(&t)?);
        }
        Command::Gen {
            seed,
            mode,
            out,
            n_train,
            n_val,
            noise,
        } => {
            let defaults = SyntheticConfig::default();
            let cfg = SyntheticConfig {
                seed,
                interaction_mode: mode,
                n_train: n_train.unwrap_or(defaults.n_train),
                n_val_per_split: n_val.unwrap_or(defaults.n_val_per_split),
                noise_std: noise.unwrap_or(defaults.noise_std),
                ..defaults
            };
            let dataset = generate_synthetic(&cfg)?;
            write_dataset(&dataset, &out)?;
            println!("{} systems written to {}", dataset.len(), out.display());
        }
        Command::Stats { data } => {
            let dataset = read_dataset(&data)?;
            let s = duplicate_target_stats(&dataset)?;
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
        Command::Verify {
            scope,
            systems,
            seed,
            inject_cross_edge,
        } => {
            if let Err(e) = parse_scope(&scope) {
                eprintln!("error: {e}");
                return Ok(Status::Usage);
            }
            let opts = VerifyOptions {
                systems,
                seed,
                inject_cross_edge,
                ..VerifyOptions::default()
            };
            let report = verify_with(&scope, &opts)?;
            let mut stdout = std::io::stdout().lock();
            let _ = writeln!(stdout, "{report}");
            if !report.passed() {
                let names: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
                eprintln!("failed: {}", names.join(", "));
                return Ok(Status::Failed);
            }
        }
    }
    Ok(Status::Ok)
}
