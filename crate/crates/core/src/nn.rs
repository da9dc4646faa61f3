//! Fully connected network with softmax cross-entropy, exact backprop and
//! plain gradient descent.
//!
//! Rows are examples. A layer maps `x [batch × fan_in]` to
//! `y = act(x · Wᵀ + b)` with `W [fan_out × fan_in]`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{LayerParams, Params};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        if self == Activation::Relu {
            z.mapv_inplace(|v| v.max(0.0));
        }
    }
}

/// A labelled mini-batch. Inputs are `[batch × input_dim]`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} input rows but {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidInput(format!(
                "label {bad} outside 0..{num_classes}"
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Per-layer inputs and post-activation outputs of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub inputs: Vec<Array2<f64>>,
    pub outputs: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn num_layers(&self) -> usize {
        self.inputs.len()
    }

    pub fn batch_len(&self) -> usize {
        self.inputs.first().map_or(0, |x| x.nrows())
    }

    pub fn logits(&self) -> ArrayView2<'_, f64> {
        self.outputs.last().expect("cache has layers").view()
    }
}

/// d(loss)/d(param), shape-congruent with the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Params);

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub params: Params,
    pub activations: Vec<Activation>,
}

impl Network {
    /// He-initialised network: weights `N(0, 2/fan_in)`, zero biases, ReLU on
    /// hidden layers and identity on the output layer.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidArchitecture(format!(
                "need at least input and output sizes, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::InvalidArchitecture(format!(
                "layer sizes must be positive, got {layer_sizes:?}"
            )));
        }
        let mut rng = rng::rng(seed);
        let n = layer_sizes.len() - 1;
        let mut layers = Vec::with_capacity(n);
        let mut activations = Vec::with_capacity(n);
        for (k, pair) in layer_sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            let weights = Array2::from_shape_simple_fn((fan_out, fan_in), || normal.sample(&mut rng));
            layers.push(LayerParams {
                weights,
                biases: Array1::zeros(fan_out),
            });
            activations.push(if k + 1 == n {
                Activation::Identity
            } else {
                Activation::Relu
            });
        }
        Ok(Self {
            params: Params { layers },
            activations,
        })
    }

    pub fn from_parts(params: Params, activations: Vec<Activation>) -> Result<Self> {
        if params.layers.is_empty() || params.layers.len() != activations.len() {
            return Err(Error::InvalidArchitecture(format!(
                "{} layers but {} activations",
                params.layers.len(),
                activations.len()
            )));
        }
        for (k, pair) in params.layers.windows(2).enumerate() {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::InvalidArchitecture(format!(
                    "layer {k} has {} outputs but layer {} expects {} inputs",
                    pair[0].fan_out(),
                    k + 1,
                    pair[1].fan_in()
                )));
            }
        }
        for (k, l) in params.layers.iter().enumerate() {
            if l.biases.len() != l.fan_out() {
                return Err(Error::InvalidArchitecture(format!(
                    "layer {k}: {} biases for {} outputs",
                    l.biases.len(),
                    l.fan_out()
                )));
            }
        }
        Ok(Self {
            params,
            activations,
        })
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.params.layers.iter().map(|l| l.fan_out()));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.params.layers[0].fan_in()
    }

    pub fn num_classes(&self) -> usize {
        self.params.layers.last().expect("non-empty").fan_out()
    }

    pub fn num_layers(&self) -> usize {
        self.params.layers.len()
    }

    pub fn forward(&self, inputs: ArrayView2<'_, f64>) -> Result<(Array2<f64>, ForwardCache)> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input width {} but network expects {}",
                inputs.ncols(),
                self.input_dim()
            )));
        }
        let n = self.num_layers();
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(n),
            outputs: Vec::with_capacity(n),
        };
        let mut x = inputs.to_owned();
        for (layer, &act) in self.params.layers.iter().zip(&self.activations) {
            let mut y = x.dot(&layer.weights.t());
            y += &layer.biases;
            act.apply(&mut y);
            cache.inputs.push(x);
            x = y.clone();
            cache.outputs.push(y);
        }
        Ok((x, cache))
    }

    /// Logits only; skips building the cache.
    pub fn predict(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input width {} but network expects {}",
                inputs.ncols(),
                self.input_dim()
            )));
        }
        let mut x: Option<Array2<f64>> = None;
        for (layer, &act) in self.params.layers.iter().zip(&self.activations) {
            let mut y = match &x {
                Some(x) => x.dot(&layer.weights.t()),
                None => inputs.dot(&layer.weights.t()),
            };
            y += &layer.biases;
            act.apply(&mut y);
            x = Some(y);
        }
        Ok(x.expect("non-empty"))
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<()> {
        if cache.num_layers() != self.num_layers() || cache.outputs.len() != self.num_layers() {
            return Err(Error::Shape(format!(
                "cache has {} layers, network has {}",
                cache.num_layers(),
                self.num_layers()
            )));
        }
        for (k, (layer, (x, y))) in self
            .params
            .layers
            .iter()
            .zip(cache.inputs.iter().zip(&cache.outputs))
            .enumerate()
        {
            if x.ncols() != layer.fan_in() || y.ncols() != layer.fan_out() || x.nrows() != y.nrows()
            {
                return Err(Error::Shape(format!("stale cache at layer {k}")));
            }
        }
        Ok(())
    }

    /// Propagates an output-layer delta (d loss / d logits, one row per
    /// example) back through the network. Returns the pre-activation delta of
    /// every layer, in forward order.
    pub(crate) fn backprop_deltas(
        &self,
        cache: &ForwardCache,
        output_delta: Array2<f64>,
    ) -> Vec<Array2<f64>> {
        let n = self.num_layers();
        let mut deltas = Vec::with_capacity(n);
        let mut delta = output_delta;
        for k in (0..n).rev() {
            if k > 0 {
                let mut below = delta.dot(&self.params.layers[k].weights);
                if self.activations[k - 1] == Activation::Relu {
                    Zip::from(&mut below)
                        .and(&cache.outputs[k - 1])
                        .for_each(|d, &y| {
                            if y <= 0.0 {
                                *d = 0.0;
                            }
                        });
                }
                deltas.push(delta);
                delta = below;
            } else {
                deltas.push(delta);
                break;
            }
        }
        deltas.reverse();
        deltas
    }

    /// Exact gradient of the mean softmax cross-entropy over the cached batch.
    pub fn backward(&self, cache: &ForwardCache, labels: &[usize]) -> Result<Gradients> {
        self.check_cache(cache)?;
        if labels.len() != cache.batch_len() {
            return Err(Error::Shape(format!(
                "{} labels for a cached batch of {}",
                labels.len(),
                cache.batch_len()
            )));
        }
        check_labels(labels, self.num_classes())?;
        let batch = labels.len() as f64;
        let mut delta = softmax(cache.logits());
        for (row, &label) in delta.rows_mut().into_iter().zip(labels) {
            let mut row = row;
            row[label] -= 1.0;
        }
        delta /= batch;
        let deltas = self.backprop_deltas(cache, delta);
        let layers = deltas
            .iter()
            .zip(&cache.inputs)
            .map(|(d, x)| LayerParams {
                weights: d.t().dot(x),
                biases: d.sum_axis(Axis(0)),
            })
            .collect();
        Ok(Gradients(Params { layers }))
    }

    /// `p ← p − lr·g` for every parameter.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        self.params.check_congruent(&grads.0, "gradients")?;
        check_finite_grads(grads)?;
        self.params.zip_mut_with(&grads.0, |p, g| *p -= lr * g);
        Ok(())
    }

    /// Fraction of rows whose arg-max logit (lowest index on ties) equals the
    /// label.
    pub fn evaluate_accuracy(&self, inputs: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
        if labels.is_empty() {
            return Err(Error::InvalidInput("empty evaluation set".into()));
        }
        if inputs.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} input rows but {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        const CHUNK: usize = 1000;
        let mut correct = 0usize;
        for (start, chunk) in inputs.axis_chunks_iter(Axis(0), CHUNK).enumerate() {
            let logits = self.predict(chunk)?;
            let offset = start * CHUNK;
            correct += logits
                .rows()
                .into_iter()
                .zip(&labels[offset..offset + chunk.nrows()])
                .filter(|(row, &label)| argmax(*row) == label)
                .count();
        }
        Ok(correct as f64 / labels.len() as f64)
    }
}

pub(crate) fn check_finite_grads(grads: &Gradients) -> Result<()> {
    if let Some((layer, index, is_bias)) = grads.0.find_non_finite() {
        return Err(Error::NonFinite {
            what: if is_bias { "bias gradient" } else { "weight gradient" },
            layer,
            index,
        });
    }
    Ok(())
}

fn check_labels(labels: &[usize], num_classes: usize) -> Result<()> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::InvalidInput(format!(
            "label {bad} outside 0..{num_classes}"
        )));
    }
    Ok(())
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn log_sum_exp(row: ArrayView1<'_, f64>) -> f64 {
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Row-wise softmax.
pub fn softmax(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Mean over rows of `−log softmax(logits)[label]`.
pub fn loss_softmax_xent(logits: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    if logits.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} logit rows but {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    check_labels(labels, logits.ncols())?;
    let total: f64 = logits
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &label)| (log_sum_exp(row) - row[label]).max(0.0))
        .sum();
    Ok(total / labels.len() as f64)
}
