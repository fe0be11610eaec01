//! Python bindings: the task model, sampling scores, data generators and the
//! experiment runner. Matrices cross the boundary as lists of rows.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use sfada_core::domains::{gen_gaussian_ring as ring, gen_two_moons_shift as moons, DomainSpec, LabeledSet};
use sfada_core::harness::{self, ExperimentConfig};
use sfada_core::model::{self, MlpModel, ModelDims};
use sfada_core::sampling::{self, CasConfig, HypothesisLog};
use sfada_core::{Error, Tensor};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::State(_) | Error::Checkpoint(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn tensor(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    if rows.is_empty() {
        return Err(PyValueError::new_err("empty matrix"));
    }
    Tensor::from_rows(&rows).map_err(py_err)
}

type Split = (Vec<Vec<f64>>, Vec<usize>);
type ScoreRow = (usize, f64, usize, usize, f64, f64);
type MetricsRow = (usize, f64, Vec<Option<f64>>, usize);

fn unpack(set: LabeledSet) -> Split {
    (set.features.to_rows(), set.labels)
}

/// MLP feature extractor with a linear classifier head.
#[pyclass(name = "Model")]
struct PyModel {
    inner: MlpModel,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (input_dim, classes, hidden = vec![32], bottleneck = 16, seed = 0))]
    fn new(input_dim: usize, classes: usize, hidden: Vec<usize>, bottleneck: usize, seed: u64) -> PyResult<Self> {
        let dims = ModelDims {
            input_dim,
            hidden,
            bottleneck,
            classes,
        };
        Ok(Self {
            inner: MlpModel::new(dims, seed).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: model::load_checkpoint(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        model::save_checkpoint(&self.inner, path).map_err(py_err)
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.dims().input_dim
    }

    #[getter]
    fn classes(&self) -> usize {
        self.inner.dims().classes
    }

    #[getter]
    fn bottleneck(&self) -> usize {
        self.inner.dims().bottleneck
    }

    fn features(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(self.inner.features(&tensor(x)?).map_err(py_err)?.to_rows())
    }

    fn logits(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(self.inner.logits(&tensor(x)?).map_err(py_err)?.to_rows())
    }

    fn probs(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(self.inner.probs(&tensor(x)?).map_err(py_err)?.to_rows())
    }

    /// Mean per-class accuracy and the per-class vector (None for absent classes).
    fn evaluate(&self, x: Vec<Vec<f64>>, y: Vec<usize>) -> PyResult<(f64, Vec<Option<f64>>)> {
        let n = y.len();
        let set = LabeledSet::new(tensor(x)?, y, (0..n).collect(), self.inner.dims().classes).map_err(py_err)?;
        let eval = harness::evaluate(&self.inner, &set).map_err(py_err)?;
        Ok((eval.mean_acc, eval.per_class))
    }

    fn __repr__(&self) -> String {
        let d = self.inner.dims();
        format!(
            "Model(input_dim={}, hidden={:?}, bottleneck={}, classes={})",
            d.input_dim, d.hidden, d.bottleneck, d.classes
        )
    }
}

#[pyfunction]
#[pyo3(signature = (p, p_prev = None, alpha = 0.03, round = 0))]
fn contrastive_log_probs(p: Vec<f64>, p_prev: Option<Vec<f64>>, alpha: f64, round: usize) -> PyResult<Vec<f64>> {
    sampling::contrastive_log_probs(&p, p_prev.as_deref(), alpha, round).map_err(py_err)
}

/// `(margin, best, second)`.
#[pyfunction]
fn bvsb_margin(scores: Vec<f64>) -> PyResult<(f64, usize, usize)> {
    let m = sampling::bvsb_margin(&scores).map_err(py_err)?;
    Ok((m.value, m.best, m.second))
}

#[pyfunction]
fn rank_scores(scores: Vec<f64>) -> Vec<usize> {
    sampling::rank_scores(&scores)
}

#[pyfunction]
fn class_transferability(predicted: Vec<usize>, ranks: Vec<usize>, kappa: usize, classes: usize) -> PyResult<Vec<f64>> {
    sampling::class_transferability(&predicted, &ranks, kappa, classes).map_err(py_err)
}

/// One `(id, u_cm, y_a, y_b, u_ct, u)` tuple per sample, ascending id.
#[pyfunction]
#[pyo3(signature = (current, previous = None, round = 0, alpha = 0.03, lambda_ = 1.0, kappa = 100))]
fn cas_scores(
    current: BTreeMap<usize, Vec<f64>>,
    previous: Option<BTreeMap<usize, Vec<f64>>>,
    round: usize,
    alpha: f64,
    lambda_: f64,
    kappa: usize,
) -> PyResult<Vec<ScoreRow>> {
    let log = HypothesisLog::new(round, current, previous).map_err(py_err)?;
    let config = CasConfig {
        alpha,
        lambda: lambda_,
        kappa,
    };
    let scores = sampling::cas_scores(&log, &config).map_err(py_err)?;
    Ok(scores
        .into_iter()
        .map(|s| (s.id, s.u_cm, s.y_a, s.y_b, s.u_ct, s.u))
        .collect())
}

/// The `b` ids with the smallest score, ties by ascending id.
#[pyfunction]
fn select_smallest(candidates: Vec<(usize, f64)>, b: usize) -> PyResult<Vec<usize>> {
    sampling::select_smallest(&candidates, b).map_err(py_err)
}

#[pyfunction]
fn budget_schedule(budget: usize, rounds: usize) -> PyResult<Vec<usize>> {
    harness::budget_schedule(budget, rounds).map_err(py_err)
}

#[pyfunction]
fn lr_at(base_lr: f64, progress: f64) -> PyResult<f64> {
    model::lr_at(base_lr, progress).map_err(py_err)
}

fn spec_from_json(spec_json: &str) -> PyResult<DomainSpec> {
    serde_json::from_str(spec_json).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// `((source_x, source_y), (target_x, target_y))` from a JSON domain spec.
#[pyfunction]
fn gen_gaussian_ring(spec_json: &str) -> PyResult<(Split, Split)> {
    let (s, t) = ring(&spec_from_json(spec_json)?).map_err(py_err)?;
    Ok((unpack(s), unpack(t)))
}

#[pyfunction]
fn gen_two_moons_shift(spec_json: &str) -> PyResult<(Split, Split)> {
    let (s, t) = moons(&spec_from_json(spec_json)?).map_err(py_err)?;
    Ok((unpack(s), unpack(t)))
}

/// The benchmark experiment config as JSON.
#[pyfunction]
fn default_config() -> String {
    ExperimentConfig::default().to_json()
}

/// Runs an experiment from a JSON config. Returns one
/// `(round, mean_acc, per_class, labeled_count)` tuple per round.
#[pyfunction]
#[pyo3(signature = (config_json, out_dir = None))]
fn run_experiment(py: Python<'_>, config_json: &str, out_dir: Option<PathBuf>) -> PyResult<Vec<MetricsRow>> {
    let config = ExperimentConfig::from_json(config_json).map_err(py_err)?;
    let outcome = py
        .detach(|| harness::run_experiment(&config, out_dir.as_deref()))
        .map_err(py_err)?;
    Ok(outcome
        .metrics
        .into_iter()
        .map(|m| (m.round, m.mean_acc, m.per_class, m.labeled_count))
        .collect())
}

#[pymodule]
fn sfada(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(contrastive_log_probs, m)?)?;
    m.add_function(wrap_pyfunction!(bvsb_margin, m)?)?;
    m.add_function(wrap_pyfunction!(rank_scores, m)?)?;
    m.add_function(wrap_pyfunction!(class_transferability, m)?)?;
    m.add_function(wrap_pyfunction!(cas_scores, m)?)?;
    m.add_function(wrap_pyfunction!(select_smallest, m)?)?;
    m.add_function(wrap_pyfunction!(budget_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(lr_at, m)?)?;
    m.add_function(wrap_pyfunction!(gen_gaussian_ring, m)?)?;
    m.add_function(wrap_pyfunction!(gen_two_moons_shift, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
