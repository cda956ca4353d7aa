//! Python bindings for the pilf training library.
//!
//! Exposes the sparse matrix type, latent factors, and the training entry
//! points so experiments can be driven from Python without the CLI.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use pilf_core::data::{
    self, DataFormat, HdiMatrix as CoreMatrix, SplitSpec,
};
use pilf_core::harness::{train_and_evaluate, HarnessError};
use pilf_core::metrics;
use pilf_core::model::{Hyperparams, IntegralAggregation, LatentFactors as CoreFactors};
use pilf_core::optim::OptimizerKind;

fn harness_err(e: HarnessError) -> PyErr {
    match &e {
        HarnessError::Train(_) => PyRuntimeError::new_err(e.to_string()),
        HarnessError::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Sparse known-entry set of an incomplete rating matrix.
#[pyclass]
struct HdiMatrix {
    inner: CoreMatrix,
}

#[pymethods]
impl HdiMatrix {
    /// Parse a rating file ("csv" or "movielens-dat").
    #[staticmethod]
    #[pyo3(signature = (path, format="csv"))]
    fn load(path: &str, format: &str) -> PyResult<Self> {
        let format: DataFormat = format.parse().map_err(value_err)?;
        let file = std::fs::File::open(path)
            .map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        let parsed = data::parse_ratings(std::io::BufReader::new(file), format)
            .map_err(value_err)?;
        Ok(Self {
            inner: parsed.matrix,
        })
    }

    #[getter]
    fn num_rows(&self) -> usize {
        self.inner.num_rows()
    }

    #[getter]
    fn num_cols(&self) -> usize {
        self.inner.num_cols()
    }

    #[getter]
    fn nnz(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn density(&self) -> f64 {
        self.inner.density()
    }

    /// Seeded disjoint train/validation/test partition.
    #[pyo3(signature = (train=0.8, validation=0.1, test=0.1, seed=0))]
    fn split(
        &self,
        train: f64,
        validation: f64,
        test: f64,
        seed: u64,
    ) -> PyResult<(Self, Self, Self)> {
        let spec = SplitSpec::new(train, validation, test, seed).map_err(value_err)?;
        let (a, b, c) = data::split_ratings(&self.inner, &spec).map_err(value_err)?;
        Ok((Self { inner: a }, Self { inner: b }, Self { inner: c }))
    }

    /// Write the canonical `row,col,value` csv.
    fn to_csv(&self, path: &str) -> PyResult<()> {
        self.inner
            .write_csv_path(path)
            .map_err(|e| PyIOError::new_err(format!("{path}: {e}")))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "HdiMatrix({}x{}, nnz={}, density={:.4}%)",
            self.inner.num_rows(),
            self.inner.num_cols(),
            self.inner.len(),
            self.inner.density() * 100.0
        )
    }
}

/// Dense row/column factor matrices of shared rank.
#[pyclass]
struct LatentFactors {
    inner: CoreFactors,
}

#[pymethods]
impl LatentFactors {
    #[getter]
    fn num_rows(&self) -> usize {
        self.inner.num_rows()
    }

    #[getter]
    fn num_cols(&self) -> usize {
        self.inner.num_cols()
    }

    #[getter]
    fn rank(&self) -> usize {
        self.inner.rank()
    }

    /// Predicted value for entry (m, n).
    fn predict(&self, m: usize, n: usize) -> PyResult<f64> {
        self.inner.predict(m, n).map_err(value_err)
    }

    fn row_factor(&self, m: usize) -> PyResult<Vec<f64>> {
        if m >= self.inner.num_rows() {
            return Err(PyValueError::new_err(format!("row {m} out of range")));
        }
        Ok(self.inner.row_factor(m).to_vec())
    }

    fn col_factor(&self, n: usize) -> PyResult<Vec<f64>> {
        if n >= self.inner.num_cols() {
            return Err(PyValueError::new_err(format!("column {n} out of range")));
        }
        Ok(self.inner.col_factor(n).to_vec())
    }

    /// Write the csv checkpoint (bit-exact round trip).
    fn save(&self, path: &str) -> PyResult<()> {
        self.inner
            .write_checkpoint_path(path)
            .map_err(|e| PyIOError::new_err(format!("{path}: {e}")))
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        CoreFactors::read_checkpoint_path(path)
            .map(|inner| Self { inner })
            .map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "LatentFactors({}x{} rows, {}x{} cols)",
            self.inner.num_rows(),
            self.inner.rank(),
            self.inner.num_cols(),
            self.inner.rank()
        )
    }
}

/// Summary of one training run.
#[pyclass]
struct TrainResult {
    #[pyo3(get)]
    best_epoch: usize,
    #[pyo3(get)]
    best_val_rmse: f64,
    #[pyo3(get)]
    best_val_mae: f64,
    #[pyo3(get)]
    best_mae_epoch: usize,
    #[pyo3(get)]
    seconds_to_best_rmse: f64,
    #[pyo3(get)]
    seconds_to_best_mae: f64,
    #[pyo3(get)]
    test_rmse: Option<f64>,
    #[pyo3(get)]
    test_mae: Option<f64>,
    #[pyo3(get)]
    converged: bool,
    history: Vec<(usize, f64, f64, f64, f64)>,
    factors: CoreFactors,
}

#[pymethods]
impl TrainResult {
    /// Per-epoch (epoch, train_sse, val_rmse, val_mae, elapsed_seconds) tuples.
    #[getter]
    fn history(&self) -> Vec<(usize, f64, f64, f64, f64)> {
        self.history.clone()
    }

    /// Factors checkpointed at the best-validation epoch.
    fn factors(&self) -> LatentFactors {
        LatentFactors {
            inner: self.factors.clone(),
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "TrainResult(best_epoch={}, best_val_rmse={:.6}, converged={})",
            self.best_epoch,
            self.best_val_rmse,
            if self.converged { "True" } else { "False" }
        )
    }
}

/// Generate a low-rank-plus-noise matrix at the requested density.
///
/// Returns (matrix, ground_truth_factors, has_cold_nodes).
#[pyfunction]
#[pyo3(signature = (num_rows, num_cols, rank, density, noise_std=0.0, seed=0))]
fn synthetic(
    num_rows: usize,
    num_cols: usize,
    rank: usize,
    density: f64,
    noise_std: f64,
    seed: u64,
) -> PyResult<(HdiMatrix, LatentFactors, bool)> {
    let data = data::generate_synthetic(num_rows, num_cols, rank, density, noise_std, seed)
        .map_err(value_err)?;
    Ok((
        HdiMatrix { inner: data.matrix },
        LatentFactors {
            inner: data.ground_truth,
        },
        data.has_cold_nodes,
    ))
}

/// Train an optimizer ("pilf" or "plain-sgd") and report per-epoch metrics.
#[pyfunction]
#[pyo3(signature = (
    train, validation, test=None, optimizer="pilf", rank=20, lr=0.01, lam=0.03,
    kp=1.0, ki=0.0, epochs=1000, seed=0, threshold=1e-5, patience=2,
    init_scale=0.004, shuffle=true, aggregation="mean", clamp=None
))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    train: PyRef<'_, HdiMatrix>,
    validation: PyRef<'_, HdiMatrix>,
    test: Option<PyRef<'_, HdiMatrix>>,
    optimizer: &str,
    rank: usize,
    lr: f64,
    lam: f64,
    kp: f64,
    ki: f64,
    epochs: usize,
    seed: u64,
    threshold: f64,
    patience: usize,
    init_scale: f64,
    shuffle: bool,
    aggregation: &str,
    clamp: Option<f64>,
) -> PyResult<TrainResult> {
    let optimizer: OptimizerKind = optimizer.parse().map_err(value_err)?;
    let aggregation: IntegralAggregation = aggregation.parse().map_err(value_err)?;
    let hp = Hyperparams {
        eta: lr,
        lambda: lam,
        rank,
        kp,
        ki,
        max_epochs: epochs,
        conv_threshold: threshold,
        conv_patience: patience,
        seed,
        init_scale,
        shuffle_per_epoch: shuffle,
        integral_aggregation: aggregation,
        integral_clamp: clamp,
    };

    let train_ref: &CoreMatrix = &train.inner;
    let val_ref: &CoreMatrix = &validation.inner;
    let test_ref: Option<&CoreMatrix> = test.as_ref().map(|t| &t.inner);

    let outcome = py
        .detach(|| train_and_evaluate(train_ref, val_ref, test_ref, optimizer, &hp, |_| {}))
        .map_err(harness_err)?;

    Ok(TrainResult {
        best_epoch: outcome.best_epoch,
        best_val_rmse: outcome.best_val_rmse,
        best_val_mae: outcome.best_val_mae,
        best_mae_epoch: outcome.best_mae_epoch,
        seconds_to_best_rmse: outcome.seconds_to_best_rmse,
        seconds_to_best_mae: outcome.seconds_to_best_mae,
        test_rmse: outcome.test_rmse,
        test_mae: outcome.test_mae,
        converged: outcome.converged,
        history: outcome
            .history
            .iter()
            .map(|r| (r.epoch, r.train_sse, r.val_rmse, r.val_mae, r.elapsed_seconds))
            .collect(),
        factors: outcome.factors,
    })
}

/// Root-mean-square prediction error over an evaluation set.
#[pyfunction]
fn rmse(factors: PyRef<'_, LatentFactors>, eval_set: PyRef<'_, HdiMatrix>) -> PyResult<f64> {
    metrics::rmse(&factors.inner, &eval_set.inner).map_err(value_err)
}

/// Mean absolute prediction error over an evaluation set.
#[pyfunction]
fn mae(factors: PyRef<'_, LatentFactors>, eval_set: PyRef<'_, HdiMatrix>) -> PyResult<f64> {
    metrics::mae(&factors.inner, &eval_set.inner).map_err(value_err)
}

#[pymodule]
fn pilf_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<HdiMatrix>()?;
    m.add_class::<LatentFactors>()?;
    m.add_class::<TrainResult>()?;
    m.add_function(wrap_pyfunction!(synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    Ok(())
}
