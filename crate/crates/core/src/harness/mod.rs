//! End-to-end experiment orchestration: load, split, train to convergence,
//! report, and sweep the PI gains over a grid.

mod settings;

pub use settings::{parse_config_file, Settings, SettingsBuilder, SettingsError};

use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::data::{parse_ratings, split_ratings, DataError, DataFormat, HdiMatrix, SplitSpec};
use crate::metrics::{check_convergence, mae, rmse, EpochReport, MetricsError};
use crate::model::{Hyperparams, LatentFactors, ModelError};
use crate::optim::{run_epoch, OptimizerKind, PiState, TrainError};

// Decorrelates the epoch-shuffle stream from factor initialization, which
// consumes the raw seed.
const SHUFFLE_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("validation split is empty; adjust the split fractions")]
    EmptyValidation,
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error("{path} line {line}: {reason}")]
    BadMetricsCsv {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One full experiment: where the data lives, how to split it, which
/// optimizer to train, and where the reports go.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub data_path: PathBuf,
    pub data_format: DataFormat,
    pub split: SplitSpec,
    pub optimizer: OptimizerKind,
    pub hp: Hyperparams,
    /// Metrics csv destination.
    pub output_path: PathBuf,
    /// Optional factor checkpoint (taken at the best-validation epoch).
    pub checkpoint_path: Option<PathBuf>,
}

/// Grid sweep over the PI gains, sharing one parsed dataset across cells.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub base: ExperimentConfig,
    pub kp_values: Vec<f64>,
    pub ki_values: Vec<f64>,
    /// Parallel worker cap; `None` uses the rayon default.
    pub workers: Option<usize>,
}

/// Result of a training run: the per-epoch history plus best-epoch summaries.
///
/// Validation metrics drive the best-epoch selection; test metrics are
/// evaluated once, on the factors checkpointed at the best-validation-RMSE
/// epoch, so the stopping decision never sees the test set.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub history: Vec<EpochReport>,
    /// 1-based epoch with the lowest validation RMSE.
    pub best_epoch: usize,
    pub best_val_rmse: f64,
    pub seconds_to_best_rmse: f64,
    /// Lowest validation MAE over training (its own epoch and time; the
    /// minima need not coincide).
    pub best_val_mae: f64,
    pub best_mae_epoch: usize,
    pub seconds_to_best_mae: f64,
    pub test_rmse: Option<f64>,
    pub test_mae: Option<f64>,
    /// True when the convergence rule stopped training before `max_epochs`.
    pub converged: bool,
    /// Factors at the best-validation-RMSE epoch.
    pub factors: LatentFactors,
}

/// Trains on `train`, tracking validation metrics per epoch, until the
/// convergence rule fires or the epoch budget runs out. `on_epoch` sees each
/// report as it is produced.
pub fn train_and_evaluate(
    train: &HdiMatrix,
    validation: &HdiMatrix,
    test: Option<&HdiMatrix>,
    optimizer: OptimizerKind,
    hp: &Hyperparams,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<ExperimentOutcome, HarnessError> {
    hp.validate()?;
    if validation.is_empty() {
        return Err(HarnessError::EmptyValidation);
    }

    let mut factors = LatentFactors::init(
        train.num_rows(),
        train.num_cols(),
        hp.rank,
        hp.init_scale,
        hp.seed,
    );
    let mut state = match optimizer {
        OptimizerKind::Pilf => Some(PiState::new(train.num_rows(), train.num_cols())),
        OptimizerKind::PlainSgd => None,
    };
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(hp.seed ^ SHUFFLE_STREAM);

    let mut history: Vec<EpochReport> = Vec::new();
    let mut best_factors = factors.clone();
    let mut best_rmse = (0usize, f64::INFINITY, 0.0f64);
    let mut best_mae = (0usize, f64::INFINITY, 0.0f64);
    let mut converged = false;

    let start = Instant::now();
    for round in 0..hp.max_epochs {
        let stats = run_epoch(&mut factors, state.as_mut(), hp, train, &mut shuffle_rng, round)?;
        let val_rmse = rmse(&factors, validation)?;
        let val_mae = mae(&factors, validation)?;
        let report = EpochReport {
            epoch: round + 1,
            train_sse: stats.sse,
            val_rmse,
            val_mae,
            elapsed_seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&report);
        history.push(report);

        if val_rmse < best_rmse.1 {
            best_rmse = (report.epoch, val_rmse, report.elapsed_seconds);
            best_factors = factors.clone();
        }
        if val_mae < best_mae.1 {
            best_mae = (report.epoch, val_mae, report.elapsed_seconds);
        }
        if check_convergence(&history, hp.conv_threshold, hp.conv_patience) {
            converged = true;
            break;
        }
    }

    let (test_rmse, test_mae) = match test {
        Some(t) if !t.is_empty() => (
            Some(rmse(&best_factors, t)?),
            Some(mae(&best_factors, t)?),
        ),
        _ => (None, None),
    };

    Ok(ExperimentOutcome {
        history,
        best_epoch: best_rmse.0,
        best_val_rmse: best_rmse.1,
        seconds_to_best_rmse: best_rmse.2,
        best_val_mae: best_mae.1,
        best_mae_epoch: best_mae.0,
        seconds_to_best_mae: best_mae.2,
        test_rmse,
        test_mae,
        converged,
        factors: best_factors,
    })
}

/// Loads and splits the configured dataset, trains, writes the metrics csv,
/// and writes the factor checkpoint when requested.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome, HarnessError> {
    run_experiment_with(config, |_| {})
}

/// [`run_experiment`] with a per-epoch observer (the CLI uses it for
/// progress output).
pub fn run_experiment_with(
    config: &ExperimentConfig,
    on_epoch: impl FnMut(&EpochReport),
) -> Result<ExperimentOutcome, HarnessError> {
    let (train, validation, test) = load_and_split(config)?;
    let outcome = train_and_evaluate(
        &train,
        &validation,
        Some(&test),
        config.optimizer,
        &config.hp,
        on_epoch,
    )?;
    emit_metrics_csv(&outcome.history, &config.output_path)?;
    if let Some(path) = &config.checkpoint_path {
        outcome
            .factors
            .write_checkpoint_path(path)
            .map_err(io_err(path))?;
    }
    Ok(outcome)
}

fn load_and_split(
    config: &ExperimentConfig,
) -> Result<(HdiMatrix, HdiMatrix, HdiMatrix), HarnessError> {
    let file = std::fs::File::open(&config.data_path).map_err(io_err(&config.data_path))?;
    let parsed = parse_ratings(std::io::BufReader::new(file), config.data_format)?;
    Ok(split_ratings(&parsed.matrix, &config.split)?)
}

/// One sweep cell's summary.
#[derive(Debug, Clone, Copy)]
pub struct SweepRow {
    pub kp: f64,
    pub ki: f64,
    pub best_rmse: f64,
    pub best_mae: f64,
    pub epochs_to_best: usize,
    pub seconds_to_best: f64,
    pub diverged: bool,
}

/// Runs one experiment per (kp, ki) pair of the full Cartesian grid,
/// concurrently, and writes the sweep csv to the base output path. A cell
/// that diverges becomes a flagged row, not a sweep failure.
pub fn sweep_gains(config: &SweepConfig) -> Result<Vec<SweepRow>, HarnessError> {
    if config.kp_values.is_empty() || config.ki_values.is_empty() {
        return Err(HarnessError::InvalidSweep(
            "kp and ki value lists must both be non-empty".into(),
        ));
    }

    let (train, validation, test) = load_and_split(&config.base)?;
    let grid: Vec<(f64, f64)> = config
        .kp_values
        .iter()
        .flat_map(|&kp| config.ki_values.iter().map(move |&ki| (kp, ki)))
        .collect();

    let run_cell = |&(kp, ki): &(f64, f64)| -> Result<SweepRow, HarnessError> {
        let hp = Hyperparams {
            kp,
            ki,
            ..config.base.hp.clone()
        };
        match train_and_evaluate(
            &train,
            &validation,
            Some(&test),
            OptimizerKind::Pilf,
            &hp,
            |_| {},
        ) {
            Ok(outcome) => Ok(SweepRow {
                kp,
                ki,
                best_rmse: outcome.best_val_rmse,
                best_mae: outcome.best_val_mae,
                epochs_to_best: outcome.best_epoch,
                seconds_to_best: outcome.seconds_to_best_rmse,
                diverged: false,
            }),
            Err(HarnessError::Train(TrainError::Diverged { .. })) => Ok(SweepRow {
                kp,
                ki,
                best_rmse: f64::NAN,
                best_mae: f64::NAN,
                epochs_to_best: 0,
                seconds_to_best: f64::NAN,
                diverged: true,
            }),
            Err(other) => Err(other),
        }
    };

    let rows: Result<Vec<SweepRow>, HarnessError> = match config.workers {
        Some(workers) => rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| HarnessError::ThreadPool(e.to_string()))?
            .install(|| grid.par_iter().map(run_cell).collect()),
        None => grid.par_iter().map(run_cell).collect(),
    };
    let rows = rows?;

    write_sweep_csv(&rows, &config.base.output_path)?;
    Ok(rows)
}

fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<(), HarnessError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<std::fs::File>| -> std::io::Result<()> {
        writeln!(w, "kp,ki,best_rmse,best_mae,epochs_to_best,seconds_to_best,diverged")?;
        for r in rows {
            writeln!(
                w,
                "{},{},{:.16e},{:.16e},{},{:.16e},{}",
                r.kp, r.ki, r.best_rmse, r.best_mae, r.epochs_to_best, r.seconds_to_best, r.diverged
            )?;
        }
        w.flush()
    };
    write(&mut w).map_err(io_err(path))
}

/// Writes the per-epoch history as csv: a fixed header, one row per epoch,
/// reals at 17 significant digits, LF line endings.
pub fn emit_metrics_csv(history: &[EpochReport], path: &Path) -> Result<(), HarnessError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<std::fs::File>| -> std::io::Result<()> {
        writeln!(w, "epoch,train_sse,val_rmse,val_mae,elapsed_seconds")?;
        for r in history {
            writeln!(
                w,
                "{},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.epoch, r.train_sse, r.val_rmse, r.val_mae, r.elapsed_seconds
            )?;
        }
        w.flush()
    };
    write(&mut w).map_err(io_err(path))
}

/// Reads a metrics csv produced by [`emit_metrics_csv`].
pub fn read_metrics_csv(path: &Path) -> Result<Vec<EpochReport>, HarnessError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let reader = std::io::BufReader::new(file);
    let bad = |line: usize, reason: String| HarnessError::BadMetricsCsv {
        path: path.to_path_buf(),
        line,
        reason,
    };

    let mut history = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(io_err(path))?;
        if line_no == 1 {
            if line != "epoch,train_sse,val_rmse,val_mae,elapsed_seconds" {
                return Err(bad(1, format!("unexpected header '{line}'")));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(bad(line_no, format!("expected 5 fields, got {}", fields.len())));
        }
        let epoch: usize = fields[0]
            .parse()
            .map_err(|e| bad(line_no, format!("bad epoch: {e}")))?;
        let mut reals = [0.0f64; 4];
        for (i, f) in fields[1..].iter().enumerate() {
            reals[i] = f
                .parse()
                .map_err(|e| bad(line_no, format!("bad value '{f}': {e}")))?;
        }
        history.push(EpochReport {
            epoch,
            train_sse: reals[0],
            val_rmse: reals[1],
            val_mae: reals[2],
            elapsed_seconds: reals[3],
        });
    }
    Ok(history)
}
