//! Sequential-training experiments for fully connected networks.
//!
//! Five regimes are compared on permuted-MNIST and split-MNIST task
//! sequences: plain SGD, elastic weight consolidation (EWC) and weight
//! velocity attenuation (WVA), the latter two driven either by the
//! total-absolute-signal significance or by the Fisher-information diagonal.

pub mod data;
pub mod error;
pub mod fetch;
pub mod harness;
pub mod methods;
pub mod nn;
pub mod params;
pub mod rng;
pub mod significance;

pub use error::{Error, Result};
pub use nn::{Activation, Batch, ForwardCache, Gradients, Network};
pub use params::{LayerParams, Params};
