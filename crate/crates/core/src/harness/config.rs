use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::methods::{MethodConfig, MethodName, Schedule};
use crate::significance::FisherLabels;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Permuted,
    Split,
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "permuted" => Ok(ExperimentKind::Permuted),
            "split" => Ok(ExperimentKind::Split),
            _ => Err(Error::Config(format!(
                "unknown experiment {s:?} (expected permuted or split)"
            ))),
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentKind::Permuted => "permuted",
            ExperimentKind::Split => "split",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EarlyStop {
    pub enabled: bool,
    /// Stop after this many evaluations without improvement. `None` trains
    /// to the end and restores the best checkpoint.
    pub patience: Option<usize>,
}

/// Everything a run needs. Serialises to the JSON config file format; any
/// field left out takes its default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// Number of permuted tasks. Split experiments use `split_classes`.
    pub tasks: usize,
    pub split_classes: Vec<Vec<usize>>,
    pub methods: Vec<MethodName>,
    pub lambda: BTreeMap<MethodName, f64>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub passes: usize,
    pub eval_interval: usize,
    pub early_stop: EarlyStop,
    pub seed: u64,
    pub layer_sizes: Vec<usize>,
    pub fisher_labels: FisherLabels,
    /// Plain MNIST as the first permuted task.
    pub identity_first_task: bool,
    pub data_dir: PathBuf,
    /// Keep only the first N training examples of the base dataset.
    pub subsample: Option<usize>,
    /// Keep only the first N test examples of the base dataset.
    pub subsample_test: Option<usize>,
    pub out: PathBuf,
    /// Write per-task significance stores and anchors under `out/stores`.
    pub persist_stores: bool,
    /// Independent pass×method units to run at once.
    pub jobs: usize,
}

/// λ used when the config does not name one for a method.
pub fn default_lambda(method: MethodName) -> f64 {
    match method {
        MethodName::Sgd => 0.0,
        MethodName::EwcS => 0.1,
        MethodName::EwcF => 1000.0,
        MethodName::WvaS => 1000.0,
        MethodName::WvaF => 1e9,
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentKind::Permuted,
            tasks: 3,
            split_classes: vec![vec![0, 1, 2, 3, 4], vec![5, 6, 7, 8, 9]],
            methods: MethodName::ALL.to_vec(),
            lambda: BTreeMap::new(),
            learning_rate: 0.3,
            batch_size: 20,
            epochs: 20,
            passes: 10,
            eval_interval: 1000,
            early_stop: EarlyStop::default(),
            seed: 1,
            layer_sizes: vec![784, 300, 150, 10],
            fisher_labels: FisherLabels::Sampled,
            identity_first_task: true,
            data_dir: PathBuf::from("data/mnist"),
            subsample: None,
            subsample_test: None,
            out: PathBuf::from("results"),
            persist_stores: false,
            jobs: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn num_tasks(&self) -> usize {
        match self.experiment {
            ExperimentKind::Permuted => self.tasks,
            ExperimentKind::Split => self.split_classes.len(),
        }
    }

    pub fn lambda_for(&self, method: MethodName) -> f64 {
        self.lambda
            .get(&method)
            .copied()
            .unwrap_or_else(|| default_lambda(method))
    }

    pub fn method_config(&self, method: MethodName) -> Result<MethodConfig> {
        MethodConfig::new(method, self.lambda_for(method), self.learning_rate)
    }

    pub fn schedule(&self, seed: u64) -> Schedule {
        Schedule {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.passes < 1 {
            return fail("passes must be ≥ 1".into());
        }
        if self.epochs < 1 {
            return fail("epochs must be ≥ 1".into());
        }
        if self.eval_interval < 1 {
            return fail("eval interval must be ≥ 1".into());
        }
        if self.batch_size < 1 {
            return fail("batch size must be ≥ 1".into());
        }
        if self.jobs < 1 {
            return fail("jobs must be ≥ 1".into());
        }
        if self.methods.is_empty() {
            return fail("no methods selected".into());
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return fail("a method is listed twice".into());
        }
        if self.num_tasks() < 1 {
            return fail("at least one task is required".into());
        }
        if self.experiment == ExperimentKind::Split
            && self.split_classes.iter().any(|c| c.is_empty())
        {
            return fail("every split task needs at least one class".into());
        }
        if self.layer_sizes.len() < 2 {
            return fail(format!("layer sizes {:?} are too short", self.layer_sizes));
        }
        if self.subsample == Some(0) || self.subsample_test == Some(0) {
            return fail("subsample sizes must be positive".into());
        }
        for &m in &self.methods {
            self.method_config(m)?;
        }
        Ok(())
    }
}

/// Parses `"100"` (every method) or `"ewc-s=100,wva-s=10"`.
pub fn parse_lambda_spec(spec: &str, methods: &[MethodName]) -> Result<BTreeMap<MethodName, f64>> {
    let number = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("bad lambda value {s:?}")))
    };
    let mut out = BTreeMap::new();
    if !spec.contains('=') {
        let v = number(spec)?;
        for &m in methods {
            if m != MethodName::Sgd {
                out.insert(m, v);
            }
        }
        return Ok(out);
    }
    for part in spec.split(',').filter(|p| !p.trim().is_empty()) {
        let (name, value) = part
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected method=value, got {part:?}")))?;
        out.insert(name.parse()?, number(value)?);
    }
    Ok(out)
}

pub fn parse_method_list(spec: &str) -> Result<Vec<MethodName>> {
    spec.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect()
}
