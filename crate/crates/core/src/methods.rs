//! Training regimes: plain SGD, elastic weight consolidation (EWC) and
//! weight velocity attenuation (WVA).
//!
//! EWC pulls every parameter toward its anchor with a spring of stiffness
//! `λ·significance`; it is applied as an extra gradient term. WVA leaves the
//! loss alone and divides each parameter's step by `1 + λ·significance`.

use std::fmt;
use std::str::FromStr;

use ndarray::Axis;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Split;
use crate::error::{Error, Result};
use crate::nn::{check_finite_grads, loss_softmax_xent, Gradients, Network};
use crate::params::Params;
use crate::rng;
use crate::significance::{Anchor, SignificanceKind, SignificanceStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Sgd,
    Ewc,
    Wva,
}

/// The five named variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MethodName {
    #[serde(rename = "sgd")]
    Sgd,
    #[serde(rename = "ewc-s")]
    EwcS,
    #[serde(rename = "ewc-f")]
    EwcF,
    #[serde(rename = "wva-s")]
    WvaS,
    #[serde(rename = "wva-f")]
    WvaF,
}

impl MethodName {
    pub const ALL: [MethodName; 5] = [
        MethodName::Sgd,
        MethodName::EwcS,
        MethodName::EwcF,
        MethodName::WvaS,
        MethodName::WvaF,
    ];

    pub fn regime(self) -> Regime {
        match self {
            MethodName::Sgd => Regime::Sgd,
            MethodName::EwcS | MethodName::EwcF => Regime::Ewc,
            MethodName::WvaS | MethodName::WvaF => Regime::Wva,
        }
    }

    /// `None` for SGD, which needs no significance.
    pub fn significance_kind(self) -> Option<SignificanceKind> {
        match self {
            MethodName::Sgd => None,
            MethodName::EwcS | MethodName::WvaS => Some(SignificanceKind::Signal),
            MethodName::EwcF | MethodName::WvaF => Some(SignificanceKind::Fisher),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MethodName::Sgd => "sgd",
            MethodName::EwcS => "ewc-s",
            MethodName::EwcF => "ewc-f",
            MethodName::WvaS => "wva-s",
            MethodName::WvaF => "wva-f",
        }
    }
}

impl fmt::Display for MethodName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodName::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown method {s:?} (expected sgd, ewc-s, ewc-f, wva-s or wva-f)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub regime: Regime,
    /// Ignored for SGD.
    pub significance_kind: SignificanceKind,
    pub lambda: f64,
    pub learning_rate: f64,
}

impl MethodConfig {
    pub fn new(name: MethodName, lambda: f64, learning_rate: f64) -> Result<Self> {
        let config = Self {
            regime: name.regime(),
            significance_kind: name.significance_kind().unwrap_or(SignificanceKind::Signal),
            lambda,
            learning_rate,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be ≥ 0, got {}", self.lambda)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

fn check_store(net: &Network, other: &Params, what: &str) -> Result<()> {
    net.params
        .check_congruent(other, what)
        .map_err(|e| Error::InvalidInput(e.to_string()))
}

/// `(λ/2)·Σ sig·(p − p*)²` over every weight and bias.
pub fn ewc_penalty(
    net: &Network,
    anchor: &Anchor,
    sig: &SignificanceStore,
    lambda: f64,
) -> Result<f64> {
    check_store(net, anchor.params(), "anchor")?;
    check_store(net, &sig.values, "significance")?;
    let sum: f64 = net
        .params
        .values()
        .zip(anchor.params().values())
        .zip(sig.values.values())
        .map(|((p, a), s)| s * (p - a) * (p - a))
        .sum();
    Ok(0.5 * lambda * sum)
}

/// Gradient of [`ewc_penalty`]: `λ·sig·(p − p*)` per parameter.
pub fn ewc_gradient(
    net: &Network,
    anchor: &Anchor,
    sig: &SignificanceStore,
    lambda: f64,
) -> Result<Gradients> {
    let mut grads = Gradients(Params::zeros_like(&net.params));
    add_ewc_gradient(&mut grads, net, anchor, sig, lambda)?;
    Ok(grads)
}

/// Adds the EWC term into `grads`. Zero terms are skipped so that a zero λ or
/// zero significance leaves the task gradient bit-for-bit untouched.
pub fn add_ewc_gradient(
    grads: &mut Gradients,
    net: &Network,
    anchor: &Anchor,
    sig: &SignificanceStore,
    lambda: f64,
) -> Result<()> {
    check_store(net, anchor.params(), "anchor")?;
    check_store(net, &sig.values, "significance")?;
    check_store(net, &grads.0, "gradients")?;
    if lambda == 0.0 {
        return Ok(());
    }
    for (k, g) in grads.0.layers.iter_mut().enumerate() {
        let p = &net.params.layers[k];
        let a = &anchor.params().layers[k];
        let s = &sig.values.layers[k];
        ndarray::Zip::from(&mut g.weights)
            .and(&p.weights)
            .and(&a.weights)
            .and(&s.weights)
            .for_each(|g, &p, &a, &s| {
                let term = lambda * s * (p - a);
                if term != 0.0 {
                    *g += term;
                }
            });
        ndarray::Zip::from(&mut g.biases)
            .and(&p.biases)
            .and(&a.biases)
            .and(&s.biases)
            .for_each(|g, &p, &a, &s| {
                let term = lambda * s * (p - a);
                if term != 0.0 {
                    *g += term;
                }
            });
    }
    Ok(())
}

/// The per-parameter step multiplier `1 / (1 + λ·sig)`; always in `(0, 1]`
/// for `λ, sig ≥ 0`.
pub fn attenuation(lambda: f64, sig: f64) -> f64 {
    1.0 / (1.0 + lambda * sig)
}

/// `p ← p − (lr / (1 + λ·sig))·g` for every parameter.
pub fn wva_step(
    net: &mut Network,
    grads: &Gradients,
    sig: &SignificanceStore,
    lambda: f64,
    lr: f64,
) -> Result<()> {
    check_store(net, &grads.0, "gradients")?;
    check_store(net, &sig.values, "significance")?;
    if let Some(bad) = sig.values.values().find(|&s| s.is_nan() || s < 0.0) {
        return Err(Error::Invariant(format!(
            "significance must be non-negative, found {bad}"
        )));
    }
    check_finite_grads(grads)?;
    for (k, layer) in net.params.layers.iter_mut().enumerate() {
        let g = &grads.0.layers[k];
        let s = &sig.values.layers[k];
        ndarray::Zip::from(&mut layer.weights)
            .and(&g.weights)
            .and(&s.weights)
            .for_each(|p, &g, &s| *p -= (lr / (1.0 + lambda * s)) * g);
        ndarray::Zip::from(&mut layer.biases)
            .and(&g.biases)
            .and(&s.biases)
            .for_each(|p, &g, &s| *p -= (lr / (1.0 + lambda * s)) * g);
    }
    Ok(())
}

/// Mini-batch schedule for one task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
}

impl Schedule {
    pub fn steps_per_epoch(&self, examples: usize) -> usize {
        examples.div_ceil(self.batch_size)
    }

    /// Row order for `epoch`: a Fisher–Yates shuffle from a stream derived
    /// from `(seed, epoch)`.
    pub fn epoch_order(&self, examples: usize, epoch: usize) -> Vec<usize> {
        let mut rng = rng::rng(rng::derive_seed(self.seed, &[epoch as u64]));
        let mut order: Vec<usize> = (0..examples).collect();
        for i in (1..examples).rev() {
            let j = rng.random_range(0..=i as u64) as usize;
            order.swap(i, j);
        }
        order
    }
}

/// What previous tasks left behind.
#[derive(Debug, Clone, Copy)]
pub struct Prior<'a> {
    pub anchor: &'a Anchor,
    pub significance: &'a SignificanceStore,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    /// 1-based step count within this task.
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSummary {
    pub steps: usize,
    pub last_loss: f64,
    pub stopped_early: bool,
}

/// Trains `net` on `train` under `config`.
///
/// With no `prior` (first task) or for SGD, every regime is plain SGD.
/// `observer` runs after each step and may stop training.
pub fn train_task(
    net: &mut Network,
    train: &Split,
    config: &MethodConfig,
    prior: Option<Prior<'_>>,
    schedule: &Schedule,
    mut observer: impl FnMut(StepInfo, &Network) -> Result<Control>,
) -> Result<TrainSummary> {
    config.validate()?;
    if schedule.epochs == 0 || schedule.batch_size == 0 {
        return Err(Error::Config("epochs and batch size must be ≥ 1".into()));
    }
    if train.is_empty() {
        return Err(Error::InvalidInput("empty training split".into()));
    }
    if let Some(p) = &prior {
        if config.regime != Regime::Sgd && p.significance.kind != config.significance_kind {
            return Err(Error::Config(format!(
                "{:?} configured for {} significance but given {}",
                config.regime, config.significance_kind, p.significance.kind
            )));
        }
        check_store(net, p.anchor.params(), "anchor")?;
        check_store(net, &p.significance.values, "significance")?;
    }
    let prior = if config.regime == Regime::Sgd { None } else { prior };

    let mut step = 0;
    let mut last_loss = f64::NAN;
    for epoch in 0..schedule.epochs {
        let order = schedule.epoch_order(train.len(), epoch);
        for rows in order.chunks(schedule.batch_size) {
            let inputs = train.inputs.select(Axis(0), rows);
            let labels: Vec<usize> = rows.iter().map(|&i| train.labels[i]).collect();
            let (logits, cache) = net.forward(inputs.view())?;
            let loss = loss_softmax_xent(logits.view(), &labels)?;
            step += 1;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("loss became {loss} at step {step}")));
            }
            let mut grads = net.backward(&cache, &labels)?;
            match (config.regime, prior) {
                (Regime::Ewc, Some(p)) => {
                    add_ewc_gradient(&mut grads, net, p.anchor, p.significance, config.lambda)?;
                    net.sgd_step(&grads, config.learning_rate)?;
                }
                (Regime::Wva, Some(p)) => {
                    wva_step(net, &grads, p.significance, config.lambda, config.learning_rate)?;
                }
                _ => net.sgd_step(&grads, config.learning_rate)?,
            }
            last_loss = loss;
            let info = StepInfo { step, epoch, loss };
            if observer(info, net)? == Control::Stop {
                return Ok(TrainSummary {
                    steps: step,
                    last_loss,
                    stopped_early: true,
                });
            }
        }
    }
    Ok(TrainSummary {
        steps: step,
        last_loss,
        stopped_early: false,
    })
}

/// [`train_task`] without an observer. `task_index` is 0-based; EWC and WVA
/// need a prior on every task after the first.
pub fn train_task_plain(
    net: &mut Network,
    train: &Split,
    config: &MethodConfig,
    prior: Option<Prior<'_>>,
    task_index: usize,
    schedule: &Schedule,
) -> Result<TrainSummary> {
    if config.regime != Regime::Sgd && task_index > 0 && prior.is_none() {
        return Err(Error::Config(format!(
            "{:?} on task {task_index} needs the previous anchor and significance",
            config.regime
        )));
    }
    train_task(net, train, config, prior, schedule, |_, _| Ok(Control::Continue))
}
