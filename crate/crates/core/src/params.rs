//! Layer-indexed parameter containers shared by networks, gradients,
//! significance stores and anchors.

use ndarray::{Array1, Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// `[fan_out × fan_in]`
    pub weights: Array2<f64>,
    /// `[fan_out]`
    pub biases: Array1<f64>,
}

impl LayerParams {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Array2::zeros((fan_out, fan_in)),
            biases: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.nrows()
    }
}

/// One `LayerParams` per dense layer, in forward order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub layers: Vec<LayerParams>,
}

impl Params {
    pub fn zeros_like(other: &Params) -> Self {
        Self {
            layers: other
                .layers
                .iter()
                .map(|l| LayerParams::zeros(l.fan_in(), l.fan_out()))
                .collect(),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_weights(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }

    pub fn num_biases(&self) -> usize {
        self.layers.iter().map(|l| l.biases.len()).sum()
    }

    pub fn len(&self) -> usize {
        self.num_weights() + self.num_biases()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `[(fan_in, fan_out)]` per layer.
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.fan_in(), l.fan_out())).collect()
    }

    pub fn check_congruent(&self, other: &Params, what: &str) -> Result<()> {
        if self.shapes() != other.shapes() {
            return Err(Error::Shape(format!(
                "{what}: layer shapes {:?} do not match {:?}",
                other.shapes(),
                self.shapes()
            )));
        }
        Ok(())
    }

    /// Visits every scalar in (layer, weights row-major, biases) order.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()).copied())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    /// Applies `f(self, other)` elementwise, in place. Shapes must already
    /// be checked.
    pub(crate) fn zip_mut_with(&mut self, other: &Params, mut f: impl FnMut(&mut f64, f64)) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            Zip::from(&mut a.weights)
                .and(&b.weights)
                .for_each(|x, &y| f(x, y));
            Zip::from(&mut a.biases)
                .and(&b.biases)
                .for_each(|x, &y| f(x, y));
        }
    }

    /// First non-finite entry as `(layer, flat index, is_bias)`.
    pub(crate) fn find_non_finite(&self) -> Option<(usize, usize, bool)> {
        for (k, l) in self.layers.iter().enumerate() {
            if let Some(i) = l.weights.iter().position(|v| !v.is_finite()) {
                return Some((k, i, false));
            }
            if let Some(i) = l.biases.iter().position(|v| !v.is_finite()) {
                return Some((k, i, true));
            }
        }
        None
    }

    pub fn to_serde(&self) -> SerdeParams {
        SerdeParams {
            layers: self
                .layers
                .iter()
                .map(|l| SerdeLayer {
                    fan_in: l.fan_in(),
                    fan_out: l.fan_out(),
                    weights: l.weights.iter().copied().collect(),
                    biases: l.biases.to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_serde(s: &SerdeParams) -> Result<Self> {
        let layers = s
            .layers
            .iter()
            .enumerate()
            .map(|(k, l)| {
                let weights = Array2::from_shape_vec((l.fan_out, l.fan_in), l.weights.clone())
                    .map_err(|e| Error::Shape(format!("layer {k} weights: {e}")))?;
                if l.biases.len() != l.fan_out {
                    return Err(Error::Shape(format!(
                        "layer {k}: {} biases for {} outputs",
                        l.biases.len(),
                        l.fan_out
                    )));
                }
                Ok(LayerParams {
                    weights,
                    biases: Array1::from(l.biases.clone()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }
}

/// Flat, layer-indexed on-disk form. Weights are row-major `[fan_out × fan_in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerdeParams {
    pub layers: Vec<SerdeLayer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerdeLayer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}
