//! Latent factor matrices, hyperparameters, prediction, and the regularized
//! objective.
//!
//! Each row node `m` owns a length-`rank` factor vector `x_m`, each column
//! node `n` a vector `y_n`; the model predicts an entry as the dot product
//! `x_m . y_n`. Factors are stored row-major by node so the inner rank loop
//! touches contiguous memory.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{HdiMatrix, RatingTriple};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("index ({m}, {n}) out of range for {num_rows}x{num_cols} factors")]
    IndexOutOfRange {
        m: usize,
        n: usize,
        num_rows: usize,
        num_cols: usize,
    },
    #[error("invalid factors: {reason}")]
    InvalidFactors { reason: String },
    #[error("checkpoint line {line}: {reason}")]
    BadCheckpoint { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dense row and column factor matrices of shared rank.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFactors {
    num_rows: usize,
    num_cols: usize,
    rank: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl LatentFactors {
    /// Seeded initialization with every entry i.i.d. uniform in (0, init_scale].
    pub fn init(
        num_rows: usize,
        num_cols: usize,
        rank: usize,
        init_scale: f64,
        seed: u64,
    ) -> Self {
        assert!(rank >= 1, "rank must be at least 1");
        assert!(init_scale > 0.0, "init_scale must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // random::<f64>() is uniform in [0, 1); 1 - u maps it to (0, 1].
        let mut draw = |len: usize| -> Vec<f64> {
            (0..len)
                .map(|_| init_scale * (1.0 - rng.random::<f64>()))
                .collect()
        };
        let x = draw(num_rows * rank);
        let y = draw(num_cols * rank);
        Self {
            num_rows,
            num_cols,
            rank,
            x,
            y,
        }
    }

    /// Wraps pre-built factor storage, validating shape and finiteness.
    pub fn from_parts(
        num_rows: usize,
        num_cols: usize,
        rank: usize,
        x: Vec<f64>,
        y: Vec<f64>,
    ) -> Result<Self, ModelError> {
        if rank == 0 {
            return Err(ModelError::InvalidFactors {
                reason: "rank must be at least 1".into(),
            });
        }
        if x.len() != num_rows * rank || y.len() != num_cols * rank {
            return Err(ModelError::InvalidFactors {
                reason: format!(
                    "expected {}x{rank} and {}x{rank} storage, got {} and {} values",
                    num_rows,
                    num_cols,
                    x.len(),
                    y.len()
                ),
            });
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidFactors {
                reason: "non-finite factor entry".into(),
            });
        }
        Ok(Self {
            num_rows,
            num_cols,
            rank,
            x,
            y,
        })
    }

    pub fn num_rows(&self) -> usize {
        self.num_rows
    }

    pub fn num_cols(&self) -> usize {
        self.num_cols
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn row_factor(&self, m: usize) -> &[f64] {
        &self.x[m * self.rank..(m + 1) * self.rank]
    }

    pub fn col_factor(&self, n: usize) -> &[f64] {
        &self.y[n * self.rank..(n + 1) * self.rank]
    }

    pub fn row_factor_mut(&mut self, m: usize) -> &mut [f64] {
        &mut self.x[m * self.rank..(m + 1) * self.rank]
    }

    pub fn col_factor_mut(&mut self, n: usize) -> &mut [f64] {
        &mut self.y[n * self.rank..(n + 1) * self.rank]
    }

    /// Mutable access to one row factor and one column factor at once.
    pub fn pair_mut(&mut self, m: usize, n: usize) -> (&mut [f64], &mut [f64]) {
        let f = self.rank;
        (
            &mut self.x[m * f..(m + 1) * f],
            &mut self.y[n * f..(n + 1) * f],
        )
    }

    /// Bounds-checked prediction for entry (m, n).
    pub fn predict(&self, m: usize, n: usize) -> Result<f64, ModelError> {
        if m >= self.num_rows || n >= self.num_cols {
            return Err(ModelError::IndexOutOfRange {
                m,
                n,
                num_rows: self.num_rows,
                num_cols: self.num_cols,
            });
        }
        Ok(self.dot(m, n))
    }

    /// Unchecked dot product of x_m and y_n; callers validate dimensions once.
    pub(crate) fn dot(&self, m: usize, n: usize) -> f64 {
        debug_assert!(m < self.num_rows && n < self.num_cols);
        let x = self.row_factor(m);
        let y = self.col_factor(n);
        let mut acc = 0.0;
        for k in 0..self.rank {
            acc += x[k] * y[k];
        }
        acc
    }

    /// True when every factor entry is finite.
    pub fn all_finite(&self) -> bool {
        self.x.iter().chain(self.y.iter()).all(|v| v.is_finite())
    }

    /// Writes the csv checkpoint: one `rows,cols,rank` header, then one
    /// comma-separated line per row node and per column node. Values carry
    /// 17 significant digits so the round trip is bit-exact.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{},{},{}", self.num_rows, self.num_cols, self.rank)?;
        let mut write_block = |block: &[f64]| -> std::io::Result<()> {
            for node in block.chunks(self.rank) {
                let line: Vec<String> = node.iter().map(|v| format!("{v:.16e}")).collect();
                writeln!(w, "{}", line.join(","))?;
            }
            Ok(())
        };
        write_block(&self.x)?;
        write_block(&self.y)
    }

    pub fn write_checkpoint_path<P: AsRef<Path>>(&self, path: P) -> std::io::Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_checkpoint(std::io::BufWriter::new(file))
    }

    pub fn read_checkpoint<R: BufRead>(reader: R) -> Result<Self, ModelError> {
        let mut lines = reader.lines().enumerate();
        let (_, header) = lines.next().ok_or(ModelError::BadCheckpoint {
            line: 1,
            reason: "missing header".into(),
        })?;
        let header = header?;
        let dims: Vec<usize> = header
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| ModelError::BadCheckpoint {
                line: 1,
                reason: format!("bad header '{header}': {e}"),
            })?;
        if dims.len() != 3 {
            return Err(ModelError::BadCheckpoint {
                line: 1,
                reason: format!("expected rows,cols,rank header, got '{header}'"),
            });
        }
        let (num_rows, num_cols, rank) = (dims[0], dims[1], dims[2]);

        let mut x = Vec::with_capacity(num_rows * rank);
        let mut y = Vec::with_capacity(num_cols * rank);
        for (idx, line) in lines {
            let line_no = idx + 1;
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let target = if x.len() < num_rows * rank {
                &mut x
            } else {
                &mut y
            };
            for field in line.split(',') {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|e| ModelError::BadCheckpoint {
                        line: line_no,
                        reason: format!("bad value '{field}': {e}"),
                    })?;
                target.push(v);
            }
        }
        Self::from_parts(num_rows, num_cols, rank, x, y)
    }

    pub fn read_checkpoint_path<P: AsRef<Path>>(path: P) -> Result<Self, ModelError> {
        let file = std::fs::File::open(path)?;
        Self::read_checkpoint(std::io::BufReader::new(file))
    }
}

/// How per-node errors aggregate into the integral accumulator each epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IntegralAggregation {
    /// Mean of the node's raw errors that epoch; normalizes away node degree.
    #[default]
    Mean,
    /// Plain sum of the node's raw errors that epoch.
    Sum,
}

impl std::str::FromStr for IntegralAggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(IntegralAggregation::Mean),
            "sum" => Ok(IntegralAggregation::Sum),
            other => Err(format!(
                "unknown aggregation '{other}' (expected 'mean' or 'sum')"
            )),
        }
    }
}

/// Training hyperparameters shared by both optimizers.
#[derive(Debug, Clone)]
pub struct Hyperparams {
    /// Learning rate.
    pub eta: f64,
    /// Regularization strength.
    pub lambda: f64,
    /// Latent dimensionality.
    pub rank: usize,
    /// Proportional gain.
    pub kp: f64,
    /// Integral gain.
    pub ki: f64,
    pub max_epochs: usize,
    /// Minimum validation-RMSE improvement that counts as progress.
    pub conv_threshold: f64,
    /// Consecutive non-improving epochs before stopping.
    pub conv_patience: usize,
    pub seed: u64,
    pub init_scale: f64,
    pub shuffle_per_epoch: bool,
    pub integral_aggregation: IntegralAggregation,
    /// Optional symmetric bound on the integral accumulators (anti-windup).
    pub integral_clamp: Option<f64>,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            eta: 0.01,
            lambda: 0.03,
            rank: 20,
            kp: 1.0,
            ki: 0.0,
            max_epochs: 1000,
            conv_threshold: 1e-5,
            conv_patience: 2,
            seed: 0,
            init_scale: 0.004,
            shuffle_per_epoch: true,
            integral_aggregation: IntegralAggregation::Mean,
            integral_clamp: None,
        }
    }
}

impl Hyperparams {
    /// Checks positivity constraints; returns warnings for legal but
    /// suspicious settings (negative gains).
    pub fn validate(&self) -> Result<Vec<String>, ModelError> {
        let invalid = |reason: String| ModelError::InvalidFactors { reason };
        if self.eta.is_nan() || self.eta <= 0.0 {
            return Err(invalid(format!("eta {} must be positive", self.eta)));
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return Err(invalid(format!(
                "lambda {} must be non-negative",
                self.lambda
            )));
        }
        if self.rank == 0 {
            return Err(invalid("rank must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(invalid("max_epochs must be at least 1".into()));
        }
        if self.conv_threshold.is_nan() || self.conv_threshold <= 0.0 {
            return Err(invalid(format!(
                "conv_threshold {} must be positive",
                self.conv_threshold
            )));
        }
        if self.conv_patience == 0 {
            return Err(invalid("conv_patience must be at least 1".into()));
        }
        if self.init_scale.is_nan() || self.init_scale <= 0.0 {
            return Err(invalid(format!(
                "init_scale {} must be positive",
                self.init_scale
            )));
        }
        if let Some(clamp) = self.integral_clamp {
            if clamp.is_nan() || clamp <= 0.0 {
                return Err(invalid(format!("integral_clamp {clamp} must be positive")));
            }
        }
        if !self.kp.is_finite() || !self.ki.is_finite() {
            return Err(invalid("gains must be finite".into()));
        }

        let mut warnings = Vec::new();
        if self.kp < 0.0 {
            warnings.push(format!("negative proportional gain kp = {}", self.kp));
        }
        if self.ki < 0.0 {
            warnings.push(format!("negative integral gain ki = {}", self.ki));
        }
        Ok(warnings)
    }
}

/// Raw learning error e = r - x_m . y_n for one known entry.
pub fn instance_error(factors: &LatentFactors, triple: &RatingTriple) -> f64 {
    triple.value - factors.dot(triple.row, triple.col)
}

/// Regularized squared loss over the known entries: each entry contributes
/// its squared residual plus `lambda` times the squared norms of both of its
/// factor vectors.
pub fn regularized_loss(factors: &LatentFactors, matrix: &HdiMatrix, lambda: f64) -> f64 {
    assert!(lambda >= 0.0, "lambda must be non-negative");
    let mut total = 0.0;
    for t in matrix.entries() {
        let e = instance_error(factors, t);
        let xn: f64 = factors.row_factor(t.row).iter().map(|v| v * v).sum();
        let yn: f64 = factors.col_factor(t.col).iter().map(|v| v * v).sum();
        total += e * e + lambda * xn + lambda * yn;
    }
    total
}
