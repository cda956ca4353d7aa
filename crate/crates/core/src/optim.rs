//! Baseline SGD and PI-refined SGD training steps.
//!
//! Both optimizers visit one known entry at a time and apply the update
//!
//! ```text
//! x_m <- x_m + eta * (e_row * y_n - lambda * x_m)
//! y_n <- y_n + eta * (e_col * x_m - lambda * y_n)
//! ```
//!
//! with the pre-update values of `x_m` and `y_n` on both right-hand sides.
//! Plain SGD uses the raw learning error for `e_row` and `e_col`; the PI
//! variant refines it with per-node integral accumulators:
//!
//! ```text
//! e_row = kp * e + ki * row_integral[m]
//! e_col = kp * e + ki * col_integral[n]
//! ```
//!
//! The integral vectors are frozen snapshots of earlier rounds. During an
//! epoch every raw error is recorded into pending per-node buffers; at the
//! epoch boundary [`PiState::snapshot`] folds the pending aggregate into the
//! integrals. Refinement therefore never observes the in-progress epoch,
//! which keeps the trajectory independent of within-epoch visitation order.
//! With `kp = 1, ki = 0` the PI step degenerates to the plain step and the
//! two trajectories are bit-identical.

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::data::{HdiMatrix, RatingTriple};
use crate::metrics::KahanSum;
use crate::model::{instance_error, Hyperparams, IntegralAggregation, LatentFactors};

/// Which training step an experiment uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    PlainSgd,
    Pilf,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plain-sgd" => Ok(OptimizerKind::PlainSgd),
            "pilf" => Ok(OptimizerKind::Pilf),
            other => Err(format!(
                "unknown optimizer '{other}' (expected 'plain-sgd' or 'pilf')"
            )),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OptimizerKind::PlainSgd => write!(f, "plain-sgd"),
            OptimizerKind::Pilf => write!(f, "pilf"),
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(
        "training diverged at epoch {epoch}, entry ({row}, {col}): non-finite factor update"
    )]
    Diverged {
        epoch: usize,
        row: usize,
        col: usize,
    },
}

/// Non-finite factors produced while updating entry (row, col).
#[derive(Debug, Clone, Copy)]
pub struct StepDiverged {
    pub row: usize,
    pub col: usize,
}

/// Per-node integral accumulators for the PI refinement.
///
/// `row_integral` / `col_integral` hold the frozen aggregate of all completed
/// epochs; `*_pending` and `*_count` collect the current epoch's raw errors
/// until [`snapshot`](Self::snapshot) folds them in. Storage is one f64 and
/// one counter per node.
#[derive(Debug, Clone)]
pub struct PiState {
    row_integral: Vec<f64>,
    col_integral: Vec<f64>,
    row_pending: Vec<f64>,
    col_pending: Vec<f64>,
    row_count: Vec<u32>,
    col_count: Vec<u32>,
    epoch: usize,
}

impl PiState {
    pub fn new(num_rows: usize, num_cols: usize) -> Self {
        Self {
            row_integral: vec![0.0; num_rows],
            col_integral: vec![0.0; num_cols],
            row_pending: vec![0.0; num_rows],
            col_pending: vec![0.0; num_cols],
            row_count: vec![0; num_rows],
            col_count: vec![0; num_cols],
            epoch: 0,
        }
    }

    /// Completed-epoch count, i.e. the round currently in progress.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn row_integral(&self, m: usize) -> f64 {
        self.row_integral[m]
    }

    pub fn col_integral(&self, n: usize) -> f64 {
        self.col_integral[n]
    }

    pub fn row_integrals(&self) -> &[f64] {
        &self.row_integral
    }

    pub fn col_integrals(&self) -> &[f64] {
        &self.col_integral
    }

    /// PI refinement of a raw learning error for entry (m, n). Reads only the
    /// frozen integral snapshot, never the current epoch's pending values.
    pub fn refine(&self, hp: &Hyperparams, m: usize, n: usize, e: f64) -> (f64, f64) {
        let e_row = hp.kp * e + hp.ki * self.row_integral[m];
        let e_col = hp.kp * e + hp.ki * self.col_integral[n];
        (e_row, e_col)
    }

    fn record(&mut self, m: usize, n: usize, e: f64) {
        self.row_pending[m] += e;
        self.col_pending[n] += e;
        self.row_count[m] += 1;
        self.col_count[n] += 1;
    }

    /// Folds the epoch's per-node aggregate (sum, or mean over the visits)
    /// into the integral vectors, applies the optional clamp, resets the
    /// pending buffers, and advances the epoch counter. Nodes with no visits
    /// this epoch keep their integral unchanged.
    pub fn snapshot(&mut self, hp: &Hyperparams) {
        fold_pending(
            &mut self.row_integral,
            &mut self.row_pending,
            &mut self.row_count,
            hp,
        );
        fold_pending(
            &mut self.col_integral,
            &mut self.col_pending,
            &mut self.col_count,
            hp,
        );
        self.epoch += 1;
    }
}

fn fold_pending(integral: &mut [f64], pending: &mut [f64], count: &mut [u32], hp: &Hyperparams) {
    for i in 0..integral.len() {
        if count[i] > 0 {
            let delta = match hp.integral_aggregation {
                IntegralAggregation::Sum => pending[i],
                IntegralAggregation::Mean => pending[i] / count[i] as f64,
            };
            integral[i] += delta;
            if let Some(c) = hp.integral_clamp {
                integral[i] = integral[i].clamp(-c, c);
            }
        }
        pending[i] = 0.0;
        count[i] = 0;
    }
}

// Shared by both optimizers so the kp=1, ki=0 reduction is bit-identical.
#[inline]
fn apply_update(x: &mut [f64], y: &mut [f64], eta: f64, lambda: f64, e_row: f64, e_col: f64) {
    for k in 0..x.len() {
        let xv = x[k];
        let yv = y[k];
        x[k] = xv + eta * (e_row * yv - lambda * xv);
        y[k] = yv + eta * (e_col * xv - lambda * yv);
    }
}

fn check_finite(x: &[f64], y: &[f64], triple: &RatingTriple) -> Result<(), StepDiverged> {
    if x.iter().all(|v| v.is_finite()) && y.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(StepDiverged {
            row: triple.row,
            col: triple.col,
        })
    }
}

/// One baseline SGD update for a single entry. Returns the raw learning
/// error measured before the update.
pub fn plain_sgd_step(
    factors: &mut LatentFactors,
    hp: &Hyperparams,
    triple: &RatingTriple,
) -> Result<f64, StepDiverged> {
    let e = instance_error(factors, triple);
    let (x, y) = factors.pair_mut(triple.row, triple.col);
    apply_update(x, y, hp.eta, hp.lambda, e, e);
    check_finite(x, y, triple)?;
    Ok(e)
}

/// One PI-refined update for a single entry. The raw error is measured
/// before any mutation, refined against the frozen integrals, applied, and
/// recorded into the pending accumulators. Returns the raw error.
pub fn pilf_step(
    factors: &mut LatentFactors,
    state: &mut PiState,
    hp: &Hyperparams,
    triple: &RatingTriple,
) -> Result<f64, StepDiverged> {
    let e = instance_error(factors, triple);
    let (e_row, e_col) = state.refine(hp, triple.row, triple.col, e);
    let (x, y) = factors.pair_mut(triple.row, triple.col);
    apply_update(x, y, hp.eta, hp.lambda, e_row, e_col);
    state.record(triple.row, triple.col, e);
    check_finite(x, y, triple)?;
    Ok(e)
}

/// Raw training-error statistics for one epoch.
#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    /// Sum of squared raw (pre-update) errors over the visited entries.
    pub sse: f64,
    /// Number of entries visited.
    pub count: usize,
}

/// Runs one full pass over the training entries, visiting each exactly once
/// (seeded-shuffled order when `shuffle_per_epoch` is set, stored order
/// otherwise). Pass a [`PiState`] for the PI optimizer, `None` for plain
/// SGD; a PI epoch ends with the accumulator snapshot.
pub fn run_epoch<R: Rng>(
    factors: &mut LatentFactors,
    mut state: Option<&mut PiState>,
    hp: &Hyperparams,
    train: &HdiMatrix,
    rng: &mut R,
    epoch: usize,
) -> Result<EpochStats, TrainError> {
    assert_eq!(factors.num_rows(), train.num_rows(), "row dimension mismatch");
    assert_eq!(factors.num_cols(), train.num_cols(), "column dimension mismatch");
    if let Some(s) = state.as_deref() {
        debug_assert_eq!(s.epoch(), epoch, "PiState epoch out of sync");
    }

    let mut sse = KahanSum::new();
    let mut visit = |t: &RatingTriple, state: &mut Option<&mut PiState>| {
        let e = match state.as_deref_mut() {
            Some(s) => pilf_step(factors, s, hp, t),
            None => plain_sgd_step(factors, hp, t),
        }
        .map_err(|d| TrainError::Diverged {
            epoch,
            row: d.row,
            col: d.col,
        })?;
        sse.add(e * e);
        Ok::<(), TrainError>(())
    };

    if hp.shuffle_per_epoch {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(rng);
        for &i in &order {
            visit(&train.entries()[i], &mut state)?;
        }
    } else {
        for t in train.entries() {
            visit(t, &mut state)?;
        }
    }

    if let Some(s) = state {
        s.snapshot(hp);
    }
    Ok(EpochStats {
        sse: sse.value(),
        count: train.len(),
    })
}
