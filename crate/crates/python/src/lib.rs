//! Python bindings for the `continual` library.
//!
//! Matrices cross the boundary as lists of rows (`list[list[float]]`).

use std::path::PathBuf;

use ndarray::Array2;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use continual::harness::emit::{self, Format};
use continual::harness::{run_experiment as run_experiment_core, ExperimentConfig};
use continual::methods::{self, MethodConfig, MethodName, Prior, Schedule};
use continual::significance::{self, FisherLabels, SignificanceKind};

fn py_err(e: continual::Error) -> PyErr {
    match e {
        continual::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((n, d), flat).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

fn method(name: &str) -> PyResult<MethodName> {
    name.parse().map_err(py_err)
}

/// A dense ReLU network with a softmax cross-entropy head.
#[pyclass(module = "continual_py", skip_from_py_object)]
#[derive(Clone)]
struct Network {
    inner: continual::Network,
}

#[pymethods]
impl Network {
    #[new]
    #[pyo3(signature = (layer_sizes, seed = 0))]
    fn new(layer_sizes: Vec<usize>, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: continual::Network::init(&layer_sizes, seed).map_err(py_err)?,
        })
    }

    #[getter]
    fn layer_sizes(&self) -> Vec<usize> {
        self.inner.layer_sizes()
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.params.len()
    }

    /// All weights then biases of each layer, in order; weights row-major.
    fn parameters(&self) -> Vec<f64> {
        self.inner.params.values().collect()
    }

    fn logits(&self, inputs: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = matrix(inputs)?;
        Ok(rows(&self.inner.predict(x.view()).map_err(py_err)?))
    }

    fn probabilities(&self, inputs: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = matrix(inputs)?;
        let logits = self.inner.predict(x.view()).map_err(py_err)?;
        Ok(rows(&continual::nn::softmax(logits.view())))
    }

    fn loss(&self, inputs: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
        let x = matrix(inputs)?;
        let logits = self.inner.predict(x.view()).map_err(py_err)?;
        continual::nn::loss_softmax_xent(logits.view(), &labels).map_err(py_err)
    }

    /// Loss gradient, flattened in the order of `parameters()`.
    fn gradient(&self, inputs: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<Vec<f64>> {
        let x = matrix(inputs)?;
        let (_, cache) = self.inner.forward(x.view()).map_err(py_err)?;
        let g = self.inner.backward(&cache, &labels).map_err(py_err)?;
        Ok(g.0.values().collect())
    }

    /// One plain gradient step on a batch; returns the batch loss before it.
    fn sgd_step(&mut self, inputs: Vec<Vec<f64>>, labels: Vec<usize>, lr: f64) -> PyResult<f64> {
        let x = matrix(inputs)?;
        let (logits, cache) = self.inner.forward(x.view()).map_err(py_err)?;
        let loss = continual::nn::loss_softmax_xent(logits.view(), &labels).map_err(py_err)?;
        let g = self.inner.backward(&cache, &labels).map_err(py_err)?;
        self.inner.sgd_step(&g, lr).map_err(py_err)?;
        Ok(loss)
    }

    /// One attenuated step: each parameter moves by `lr / (1 + λ·s)` times its gradient.
    fn wva_step(
        &mut self,
        inputs: Vec<Vec<f64>>,
        labels: Vec<usize>,
        significance: &SignificanceStore,
        lambda: f64,
        lr: f64,
    ) -> PyResult<f64> {
        let x = matrix(inputs)?;
        let (logits, cache) = self.inner.forward(x.view()).map_err(py_err)?;
        let loss = continual::nn::loss_softmax_xent(logits.view(), &labels).map_err(py_err)?;
        let g = self.inner.backward(&cache, &labels).map_err(py_err)?;
        methods::wva_step(&mut self.inner, &g, &significance.inner, lambda, lr).map_err(py_err)?;
        Ok(loss)
    }

    fn accuracy(&self, inputs: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
        let x = matrix(inputs)?;
        self.inner.evaluate_accuracy(x.view(), &labels).map_err(py_err)
    }

    fn copy(&self) -> Self {
        self.clone()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.params.to_serde())
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!("Network({:?})", self.inner.layer_sizes())
    }
}

/// Per-parameter significance values for previously learned tasks.
#[pyclass(module = "continual_py", skip_from_py_object)]
#[derive(Clone)]
struct SignificanceStore {
    inner: significance::SignificanceStore,
}

#[pymethods]
impl SignificanceStore {
    /// `"signal"` or `"fisher"`.
    #[getter]
    fn kind(&self) -> String {
        self.inner.kind.to_string()
    }

    #[getter]
    fn source_tasks(&self) -> Vec<usize> {
        self.inner.source_tasks.clone()
    }

    #[getter]
    fn examples(&self) -> usize {
        self.inner.examples
    }

    /// Flattened in the same order as `Network.parameters()`.
    fn values(&self) -> Vec<f64> {
        self.inner.values.values().collect()
    }

    fn max_value(&self) -> f64 {
        self.inner.max_value()
    }

    /// Elementwise sum with another store of the same kind and shape.
    fn merge(&self, other: &SignificanceStore) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.merge(&other.inner).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save_json(&path).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: significance::SignificanceStore::load_json(&path).map_err(py_err)?,
        })
    }
}

/// Frozen copy of a network's parameters.
#[pyclass(module = "continual_py", skip_from_py_object)]
#[derive(Clone)]
struct Anchor {
    inner: significance::Anchor,
}

#[pymethods]
impl Anchor {
    #[new]
    fn new(net: &Network) -> Self {
        Self {
            inner: significance::take_anchor(&net.inner),
        }
    }

    fn values(&self) -> Vec<f64> {
        self.inner.params().values().collect()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save_json(&path).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: significance::Anchor::load_json(&path).map_err(py_err)?,
        })
    }
}

#[pyfunction]
fn accumulate_signal(net: &Network, inputs: Vec<Vec<f64>>) -> PyResult<SignificanceStore> {
    let x = matrix(inputs)?;
    Ok(SignificanceStore {
        inner: significance::accumulate_signal(&net.inner, x.view()).map_err(py_err)?,
    })
}

/// `labels` is `"sampled"` (draw from the model) or `"true"`.
#[pyfunction]
#[pyo3(signature = (net, inputs, true_labels, seed = 0, labels = "sampled"))]
fn estimate_fisher_diag(
    net: &Network,
    inputs: Vec<Vec<f64>>,
    true_labels: Vec<usize>,
    seed: u64,
    labels: &str,
) -> PyResult<SignificanceStore> {
    let x = matrix(inputs)?;
    let mode: FisherLabels = labels.parse().map_err(py_err)?;
    Ok(SignificanceStore {
        inner: significance::estimate_fisher_diag(&net.inner, x.view(), &true_labels, mode, seed)
            .map_err(py_err)?,
    })
}

#[pyfunction]
fn ewc_penalty(
    net: &Network,
    anchor: &Anchor,
    significance: &SignificanceStore,
    lambda: f64,
) -> PyResult<f64> {
    methods::ewc_penalty(&net.inner, &anchor.inner, &significance.inner, lambda).map_err(py_err)
}

#[pyfunction]
fn attenuation(lambda: f64, significance: f64) -> f64 {
    methods::attenuation(lambda, significance)
}

/// Seeded pixel permutation of `0..n`.
#[pyfunction]
fn permutation(n: usize, seed: u64) -> Vec<usize> {
    continual::data::Permutation::from_seed(n, seed).indices().to_vec()
}

/// Trains `net` in place on one task and returns `(steps, last_loss)`.
///
/// `anchor` and `significance` describe earlier tasks; leave them out for
/// the first task.
#[pyfunction]
#[pyo3(signature = (
    net, inputs, labels, method = "sgd", lambda_ = 0.0, lr = 0.1,
    epochs = 1, batch_size = 100, seed = 0, anchor = None, significance = None
))]
#[allow(clippy::too_many_arguments)]
fn train_task(
    net: &mut Network,
    inputs: Vec<Vec<f64>>,
    labels: Vec<usize>,
    method: &str,
    lambda_: f64,
    lr: f64,
    epochs: usize,
    batch_size: usize,
    seed: u64,
    anchor: Option<&Anchor>,
    significance: Option<&SignificanceStore>,
) -> PyResult<(usize, f64)> {
    let config = MethodConfig::new(self::method(method)?, lambda_, lr).map_err(py_err)?;
    let prior = match (anchor, significance) {
        (Some(a), Some(s)) => Some(Prior {
            anchor: &a.inner,
            significance: &s.inner,
        }),
        (None, None) => None,
        _ => {
            return Err(PyValueError::new_err(
                "anchor and significance must be given together",
            ))
        }
    };
    let train = continual::data::Split {
        inputs: matrix(inputs)?,
        labels,
    };
    let schedule = Schedule {
        epochs,
        batch_size,
        seed,
    };
    let summary = methods::train_task(&mut net.inner, &train, &config, prior, &schedule, |_, _| {
        Ok(methods::Control::Continue)
    })
    .map_err(py_err)?;
    Ok((summary.steps, summary.last_loss))
}

/// Significance kind used by a method name, or `None` for plain SGD.
#[pyfunction]
fn significance_kind(method: &str) -> PyResult<Option<String>> {
    Ok(self::method(method)?
        .significance_kind()
        .map(|k: SignificanceKind| k.to_string()))
}

/// Runs a full experiment described by a JSON config and returns the results
/// as JSON text.
#[pyfunction]
fn run_experiment(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let config: ExperimentConfig =
        serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let results = py
        .detach(|| run_experiment_core(&config))
        .map_err(py_err)?;
    emit::results_json(&results).map_err(py_err)
}

/// Writes CSV and JSON outputs for results JSON; returns the written paths.
#[pyfunction]
fn emit_results(results_json: &str, out_dir: PathBuf) -> PyResult<Vec<PathBuf>> {
    let results = emit::parse_results_json(results_json).map_err(py_err)?;
    emit::emit_results(&results, &out_dir, &[Format::Csv, Format::Json]).map_err(py_err)
}

#[pymodule]
fn continual_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Network>()?;
    m.add_class::<SignificanceStore>()?;
    m.add_class::<Anchor>()?;
    m.add_function(wrap_pyfunction!(accumulate_signal, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_fisher_diag, m)?)?;
    m.add_function(wrap_pyfunction!(ewc_penalty, m)?)?;
    m.add_function(wrap_pyfunction!(attenuation, m)?)?;
    m.add_function(wrap_pyfunction!(permutation, m)?)?;
    m.add_function(wrap_pyfunction!(train_task, m)?)?;
    m.add_function(wrap_pyfunction!(significance_kind, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(emit_results, m)?)?;
    Ok(())
}
