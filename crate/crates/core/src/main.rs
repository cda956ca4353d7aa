//! `pilf` — train and benchmark latent factor models on sparse rating data.
//!
//! Single-run mode trains one optimizer and writes a per-epoch metrics csv;
//! passing `--sweep-kp` and/or `--sweep-ki` switches to a gain-grid sweep
//! that writes one summary row per (kp, ki) cell instead.
//!
//! Configuration is layered: defaults, then `--config` file entries, then
//! `PILF_*` environment variables, then flags.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use pilf_core::harness::{
    self, parse_config_file, HarnessError, Settings, SettingsBuilder,
};
use pilf_core::optim::TrainError;

#[derive(Parser, Debug)]
#[command(name = "pilf", version, about = "Latent factor analysis over sparse rating matrices, with PI-refined SGD")]
struct Cli {
    /// Flat `key = value` config file; flags and PILF_* env vars override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Rating data file.
    #[arg(long)]
    data: Option<String>,
    /// Input format: movielens-dat or csv.
    #[arg(long)]
    format: Option<String>,
    /// Optimizer: plain-sgd or pilf.
    #[arg(long)]
    optimizer: Option<String>,
    /// Latent rank.
    #[arg(long)]
    rank: Option<String>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<String>,
    /// Regularization strength.
    #[arg(long)]
    lambda: Option<String>,
    /// Proportional gain.
    #[arg(long, allow_hyphen_values = true)]
    kp: Option<String>,
    /// Integral gain.
    #[arg(long, allow_hyphen_values = true)]
    ki: Option<String>,
    /// Epoch budget.
    #[arg(long)]
    epochs: Option<String>,
    /// Seed for initialization, shuffling, and splitting.
    #[arg(long)]
    seed: Option<String>,
    /// Train,validation,test fractions, e.g. 0.8,0.1,0.1.
    #[arg(long)]
    split: Option<String>,
    /// Output csv path (per-epoch metrics, or sweep rows in sweep mode).
    #[arg(long)]
    out: Option<String>,
    /// Factor checkpoint path (best-validation epoch).
    #[arg(long)]
    checkpoint: Option<String>,
    /// Comma-separated kp grid; enables sweep mode.
    #[arg(long = "sweep-kp", allow_hyphen_values = true)]
    sweep_kp: Option<String>,
    /// Comma-separated ki grid; enables sweep mode.
    #[arg(long = "sweep-ki", allow_hyphen_values = true)]
    sweep_ki: Option<String>,
    /// Integral aggregation per node and epoch: mean or sum.
    #[arg(long)]
    aggregation: Option<String>,
    /// Symmetric anti-windup bound on the integral accumulators.
    #[arg(long)]
    clamp: Option<String>,
    /// Minimum validation-RMSE improvement that counts as progress.
    #[arg(long)]
    threshold: Option<String>,
    /// Non-improving epochs tolerated before stopping.
    #[arg(long)]
    patience: Option<String>,
    /// Parallel workers for sweep cells.
    #[arg(long)]
    workers: Option<String>,
    /// Factor initialization scale.
    #[arg(long = "init-scale")]
    init_scale: Option<String>,
    /// Shuffle the training entries each epoch: true or false.
    #[arg(long)]
    shuffle: Option<String>,
}

impl Cli {
    fn flag_pairs(&self) -> Vec<(&'static str, String)> {
        let mut pairs = Vec::new();
        let mut push = |key: &'static str, value: &Option<String>| {
            if let Some(v) = value {
                pairs.push((key, v.clone()));
            }
        };
        push("data", &self.data);
        push("format", &self.format);
        push("optimizer", &self.optimizer);
        push("rank", &self.rank);
        push("lr", &self.lr);
        push("lambda", &self.lambda);
        push("kp", &self.kp);
        push("ki", &self.ki);
        push("epochs", &self.epochs);
        push("seed", &self.seed);
        push("split", &self.split);
        push("out", &self.out);
        push("checkpoint", &self.checkpoint);
        push("sweep-kp", &self.sweep_kp);
        push("sweep-ki", &self.sweep_ki);
        push("aggregation", &self.aggregation);
        push("clamp", &self.clamp);
        push("threshold", &self.threshold);
        push("patience", &self.patience);
        push("workers", &self.workers);
        push("init-scale", &self.init_scale);
        push("shuffle", &self.shuffle);
        pairs
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(
                e.downcast_ref::<HarnessError>(),
                Some(HarnessError::Train(TrainError::Diverged { .. }))
            ) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn run(cli: &Cli) -> Result<(), Box<dyn std::error::Error>> {
    let settings = resolve(cli)?;
    for warning in settings.hp.validate()? {
        eprintln!("warning: {warning}");
    }

    if let Some(sweep) = settings.sweep_config() {
        let rows = harness::sweep_gains(&sweep)?;
        let diverged = rows.iter().filter(|r| r.diverged).count();
        println!(
            "sweep complete: {} cells ({} diverged) -> {}",
            rows.len(),
            diverged,
            sweep.base.output_path.display()
        );
        for row in &rows {
            if row.diverged {
                println!("  kp={} ki={}  DIVERGED", row.kp, row.ki);
            } else {
                println!(
                    "  kp={} ki={}  best_rmse={:.6} best_mae={:.6} epochs={} ({:.2}s)",
                    row.kp, row.ki, row.best_rmse, row.best_mae, row.epochs_to_best, row.seconds_to_best
                );
            }
        }
        return Ok(());
    }

    let config = settings.experiment_config();
    let outcome = harness::run_experiment_with(&config, |r| {
        println!(
            "epoch {:>4}  train_sse {:.6e}  val_rmse {:.6}  val_mae {:.6}  [{:.2}s]",
            r.epoch, r.train_sse, r.val_rmse, r.val_mae, r.elapsed_seconds
        );
    })?;

    println!(
        "best validation rmse {:.6} at epoch {} ({:.2}s); best mae {:.6} at epoch {} ({:.2}s)",
        outcome.best_val_rmse,
        outcome.best_epoch,
        outcome.seconds_to_best_rmse,
        outcome.best_val_mae,
        outcome.best_mae_epoch,
        outcome.seconds_to_best_mae,
    );
    if let (Some(rmse), Some(mae)) = (outcome.test_rmse, outcome.test_mae) {
        println!("test rmse {rmse:.6}  test mae {mae:.6} (best-validation checkpoint)");
    }
    println!(
        "{} after {} epochs -> {}",
        if outcome.converged { "converged" } else { "epoch budget reached" },
        outcome.history.len(),
        config.output_path.display()
    );
    Ok(())
}

fn resolve(cli: &Cli) -> Result<Settings, Box<dyn std::error::Error>> {
    let mut builder = SettingsBuilder::new();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("{}: {e}", path.display()))?;
        let pairs = parse_config_file(&text)?;
        builder.apply_pairs(
            pairs.iter().map(|(k, v)| (k.as_str(), v.clone())),
            &format!("config file {}", path.display()),
        )?;
    }
    builder.apply_env(|var| std::env::var(var).ok())?;
    builder.apply_pairs(cli.flag_pairs(), "command line")?;
    Ok(builder.finish()?)
}
