//! Per-parameter significance of a trained network, and parameter anchors.
//!
//! Two estimators are provided:
//!
//! * **signal** – the mean absolute signal carried by each connection over a
//!   dataset, `S^w_ij = mean_k |x_kj · w_ij|`, and the mean absolute output of
//!   each neuron for its bias, `S^b_i = mean_k |y_ki|`;
//! * **fisher** – the diagonal of the Fisher information, estimated as the
//!   mean squared gradient of `log p(ŷ | x)` with `ŷ` drawn from the model's
//!   own softmax (or the true label, see [`FisherLabels`]).
//!
//! Stores from successive tasks are summed with [`SignificanceStore::merge`].

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{softmax, Network};
use crate::params::{LayerParams, Params, SerdeParams};
use crate::rng;

/// Rows per forward pass when scanning a dataset.
pub const SCAN_BATCH: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignificanceKind {
    Signal,
    Fisher,
}

impl fmt::Display for SignificanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SignificanceKind::Signal => "signal",
            SignificanceKind::Fisher => "fisher",
        })
    }
}

/// Which label the Fisher estimator differentiates the log-likelihood at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FisherLabels {
    /// One label per example sampled from the model's softmax.
    #[default]
    Sampled,
    /// The dataset's own label (the "empirical" Fisher).
    True,
}

impl FromStr for FisherLabels {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sampled" => Ok(FisherLabels::Sampled),
            "true" => Ok(FisherLabels::True),
            _ => Err(Error::Config(format!(
                "unknown Fisher label mode {s:?} (expected sampled or true)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceStore {
    pub kind: SignificanceKind,
    pub values: Params,
    /// Tasks whose significance has been summed into this store.
    pub source_tasks: Vec<usize>,
    /// Total number of examples the estimates were averaged over.
    pub examples: usize,
}

impl SignificanceStore {
    pub fn zeros(kind: SignificanceKind, like: &Params) -> Self {
        Self {
            kind,
            values: Params::zeros_like(like),
            source_tasks: Vec::new(),
            examples: 0,
        }
    }

    /// Elementwise sum; both stores must have the same kind and shapes.
    pub fn merge(&self, other: &SignificanceStore) -> Result<SignificanceStore> {
        if self.kind != other.kind {
            return Err(Error::InvalidInput(format!(
                "cannot merge {} significance with {} significance",
                self.kind, other.kind
            )));
        }
        self.values
            .check_congruent(&other.values, "significance merge")
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        let mut values = self.values.clone();
        values.zip_mut_with(&other.values, |a, b| *a += b);
        let mut source_tasks = self.source_tasks.clone();
        source_tasks.extend(&other.source_tasks);
        Ok(SignificanceStore {
            kind: self.kind,
            values,
            source_tasks,
            examples: self.examples + other.examples,
        })
    }

    pub fn check_valid(&self) -> Result<()> {
        for (k, l) in self.values.layers.iter().enumerate() {
            for (what, v) in l
                .weights
                .iter()
                .map(|v| ("weight", v))
                .chain(l.biases.iter().map(|v| ("bias", v)))
            {
                if !v.is_finite() || *v < 0.0 {
                    return Err(Error::Invariant(format!(
                        "{what} significance {v} in layer {k} is not a finite non-negative value"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn max_value(&self) -> f64 {
        self.values.values().fold(0.0, f64::max)
    }

    pub fn to_file(&self) -> SignificanceFile {
        SignificanceFile {
            kind: self.kind,
            source_tasks: self.source_tasks.clone(),
            examples: self.examples,
            params: self.values.to_serde(),
        }
    }

    pub fn from_file(file: &SignificanceFile) -> Result<Self> {
        let store = SignificanceStore {
            kind: file.kind,
            values: Params::from_serde(&file.params)?,
            source_tasks: file.source_tasks.clone(),
            examples: file.examples,
        };
        store.check_valid()?;
        Ok(store)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        write_json(path, &self.to_file())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_file(&serde_json::from_str(&text)?)
    }
}

/// On-disk significance store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceFile {
    pub kind: SignificanceKind,
    pub source_tasks: Vec<usize>,
    pub examples: usize,
    #[serde(flatten)]
    pub params: SerdeParams,
}

/// Frozen copy of a network's parameters at the end of a task.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchor(Params);

impl Anchor {
    pub fn take(net: &Network) -> Self {
        Anchor(net.params.clone())
    }

    pub fn params(&self) -> &Params {
        &self.0
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        write_json(path, &self.0.to_serde())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Anchor(Params::from_serde(&serde_json::from_str(&text)?)?))
    }
}

pub fn take_anchor(net: &Network) -> Anchor {
    Anchor::take(net)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Mean absolute signal per connection and mean absolute activation per
/// neuron over every row of `inputs`. No parameters are touched.
pub fn accumulate_signal(net: &Network, inputs: ArrayView2<'_, f64>) -> Result<SignificanceStore> {
    if inputs.nrows() == 0 {
        return Err(Error::InvalidInput(
            "cannot measure signal over an empty dataset".into(),
        ));
    }
    let mut abs_in: Vec<Array1<f64>> = net
        .params
        .layers
        .iter()
        .map(|l| Array1::zeros(l.fan_in()))
        .collect();
    let mut abs_out: Vec<Array1<f64>> = net
        .params
        .layers
        .iter()
        .map(|l| Array1::zeros(l.fan_out()))
        .collect();
    for chunk in inputs.axis_chunks_iter(Axis(0), SCAN_BATCH) {
        let (_, cache) = net.forward(chunk)?;
        for k in 0..net.num_layers() {
            abs_in[k] += &cache.inputs[k].mapv(f64::abs).sum_axis(Axis(0));
            abs_out[k] += &cache.outputs[k].mapv(f64::abs).sum_axis(Axis(0));
        }
    }
    let n = inputs.nrows() as f64;
    // |x·w| = |x|·|w|, so the per-connection mean factors into |w| times the
    // mean absolute input on that connection's source.
    let layers = net
        .params
        .layers
        .iter()
        .zip(abs_in.iter().zip(&abs_out))
        .map(|(l, (sum_in, sum_out))| {
            let mean_in = sum_in / n;
            let mut weights = l.weights.mapv(f64::abs);
            weights *= &mean_in;
            LayerParams {
                weights,
                biases: sum_out / n,
            }
        })
        .collect();
    Ok(SignificanceStore {
        kind: SignificanceKind::Signal,
        values: Params { layers },
        source_tasks: Vec::new(),
        examples: inputs.nrows(),
    })
}

/// Draws one class per row from its probability vector by inverse CDF.
/// Classes with zero probability are never drawn.
pub(crate) fn sample_labels(probs: ArrayView2<'_, f64>, rng: &mut rng::Rng) -> Vec<usize> {
    probs
        .rows()
        .into_iter()
        .map(|row| {
            let u: f64 = rng.random();
            let mut cumulative = 0.0;
            let mut last_positive = 0;
            for (c, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    cumulative += p;
                    last_positive = c;
                    if u < cumulative {
                        return c;
                    }
                }
            }
            last_positive
        })
        .collect()
}

/// Labels the Fisher estimator will use for `inputs`, in row order. Exposed
/// so tests can rebuild the estimate independently.
pub fn fisher_labels(
    net: &Network,
    inputs: ArrayView2<'_, f64>,
    true_labels: &[usize],
    mode: FisherLabels,
    seed: u64,
) -> Result<Vec<usize>> {
    match mode {
        FisherLabels::True => Ok(true_labels.to_vec()),
        FisherLabels::Sampled => {
            let mut rng = rng::rng(seed);
            let mut labels = Vec::with_capacity(inputs.nrows());
            for chunk in inputs.axis_chunks_iter(Axis(0), SCAN_BATCH) {
                let probs = softmax(net.predict(chunk)?.view());
                labels.extend(sample_labels(probs.view(), &mut rng));
            }
            Ok(labels)
        }
    }
}

/// Diagonal Fisher information: per parameter, the mean over rows of
/// `(∂ log p(ŷ|x) / ∂θ)²`. Biases are treated exactly like weights.
pub fn estimate_fisher_diag(
    net: &Network,
    inputs: ArrayView2<'_, f64>,
    true_labels: &[usize],
    mode: FisherLabels,
    seed: u64,
) -> Result<SignificanceStore> {
    if inputs.nrows() == 0 {
        return Err(Error::InvalidInput(
            "cannot estimate Fisher information over an empty dataset".into(),
        ));
    }
    if mode == FisherLabels::True && true_labels.len() != inputs.nrows() {
        return Err(Error::Shape(format!(
            "{} labels for {} examples",
            true_labels.len(),
            inputs.nrows()
        )));
    }
    let mut rng = rng::rng(seed);
    let mut acc = Params::zeros_like(&net.params);
    for (b, chunk) in inputs.axis_chunks_iter(Axis(0), SCAN_BATCH).enumerate() {
        let (logits, cache) = net.forward(chunk)?;
        let mut delta = softmax(logits.view());
        let labels = match mode {
            FisherLabels::Sampled => sample_labels(delta.view(), &mut rng),
            FisherLabels::True => true_labels[b * SCAN_BATCH..b * SCAN_BATCH + chunk.nrows()].to_vec(),
        };
        for (mut row, &label) in delta.rows_mut().into_iter().zip(&labels) {
            row[label] -= 1.0;
        }
        // Per-row deltas; the per-example weight gradient is the outer product
        // δ ⊗ x, so the sum of its squares over rows is (δ²)ᵀ·(x²).
        let deltas = net.backprop_deltas(&cache, delta);
        for (k, (d, x)) in deltas.iter().zip(&cache.inputs).enumerate() {
            let d2 = d.mapv(|v| v * v);
            let x2: Array2<f64> = x.mapv(|v| v * v);
            acc.layers[k].weights += &d2.t().dot(&x2);
            acc.layers[k].biases += &d2.sum_axis(Axis(0));
        }
    }
    let n = inputs.nrows() as f64;
    acc.values_mut().for_each(|v| *v /= n);
    Ok(SignificanceStore {
        kind: SignificanceKind::Fisher,
        values: acc,
        source_tasks: Vec::new(),
        examples: inputs.nrows(),
    })
}
