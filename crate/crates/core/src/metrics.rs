//! Held-out prediction error metrics and the convergence detector.
//!
//! Metric sums use compensated (Kahan) summation: evaluation sets reach 1e6+
//! entries and the reported values are compared at four decimal places.

use thiserror::Error;

use crate::data::HdiMatrix;
use crate::model::LatentFactors;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("factors are {f_rows}x{f_cols} but evaluation set is {m_rows}x{m_cols}")]
    DimensionMismatch {
        f_rows: usize,
        f_cols: usize,
        m_rows: usize,
        m_cols: usize,
    },
}

/// Compensated summation accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    compensation: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let y = value - self.compensation;
        let t = self.sum + y;
        self.compensation = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochReport {
    /// 1-based training round.
    pub epoch: usize,
    /// Sum of squared raw training errors over the epoch.
    pub train_sse: f64,
    pub val_rmse: f64,
    pub val_mae: f64,
    /// Cumulative wall time since the training loop started.
    pub elapsed_seconds: f64,
}

fn check_dims(factors: &LatentFactors, eval_set: &HdiMatrix) -> Result<(), MetricsError> {
    if eval_set.is_empty() {
        return Err(MetricsError::EmptyEvalSet);
    }
    if factors.num_rows() != eval_set.num_rows() || factors.num_cols() != eval_set.num_cols() {
        return Err(MetricsError::DimensionMismatch {
            f_rows: factors.num_rows(),
            f_cols: factors.num_cols(),
            m_rows: eval_set.num_rows(),
            m_cols: eval_set.num_cols(),
        });
    }
    Ok(())
}

/// Root-mean-square prediction error over the evaluation entries.
pub fn rmse(factors: &LatentFactors, eval_set: &HdiMatrix) -> Result<f64, MetricsError> {
    check_dims(factors, eval_set)?;
    let mut sum = KahanSum::new();
    for t in eval_set.entries() {
        let e = t.value - factors.dot(t.row, t.col);
        sum.add(e * e);
    }
    Ok((sum.value() / eval_set.len() as f64).sqrt())
}

/// Mean absolute prediction error over the evaluation entries.
pub fn mae(factors: &LatentFactors, eval_set: &HdiMatrix) -> Result<f64, MetricsError> {
    check_dims(factors, eval_set)?;
    let mut sum = KahanSum::new();
    for t in eval_set.entries() {
        sum.add((t.value - factors.dot(t.row, t.col)).abs());
    }
    Ok(sum.value() / eval_set.len() as f64)
}

/// True when the best validation RMSE has failed to improve by more than
/// `threshold` for `patience` consecutive epochs.
pub fn check_convergence(history: &[EpochReport], threshold: f64, patience: usize) -> bool {
    assert!(patience >= 1, "patience must be at least 1");
    // An improvement exactly at the threshold counts as a stall; the 1e-9
    // relative slack absorbs decimal-to-binary representation error.
    let margin = threshold * (1.0 + 1e-9);
    let mut best = f64::INFINITY;
    let mut stale = 0usize;
    for report in history {
        if best - report.val_rmse > margin {
            stale = 0;
        } else {
            stale += 1;
        }
        if report.val_rmse < best {
            best = report.val_rmse;
        }
    }
    stale >= patience
}
