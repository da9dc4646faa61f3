//! Coarse λ sweep: one run per grid value, scored by the final mean accuracy
//! over all tasks averaged across passes. A λ with any failed run is
//! disqualified.

use serde::{Deserialize, Serialize};

use crate::data::Mnist;
use crate::error::{Error, Result};
use crate::methods::MethodName;

use super::config::ExperimentConfig;
use super::record::{Results, RunRecord};
use super::run::run_sequential;

/// Default grids, one decade apart, per method.
pub fn default_grid(method: MethodName) -> Vec<f64> {
    match method {
        MethodName::Sgd => vec![0.0],
        MethodName::EwcS => vec![0.01, 0.1, 1.0, 10.0],
        MethodName::WvaS => vec![10.0, 100.0, 1e3, 1e4, 1e5],
        MethodName::EwcF => vec![10.0, 100.0, 1e3, 1e4],
        MethodName::WvaF => vec![1e5, 1e6, 1e7, 1e8, 1e9],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda: f64,
    /// `None` when a run failed.
    pub score: Option<f64>,
    pub records: Vec<RunRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub method: MethodName,
    pub points: Vec<SweepPoint>,
}

impl Sweep {
    pub fn best(&self) -> Option<&SweepPoint> {
        self.points
            .iter()
            .filter(|p| p.score.is_some())
            .max_by(|a, b| a.score.partial_cmp(&b.score).expect("finite scores"))
    }
}

pub fn score(records: &[RunRecord]) -> Option<f64> {
    let finals: Option<Vec<f64>> = records
        .iter()
        .map(|r| r.is_completed().then(|| r.final_mean_acc()).flatten())
        .collect();
    let finals = finals?;
    (!finals.is_empty()).then(|| finals.iter().sum::<f64>() / finals.len() as f64)
}

pub fn lambda_sweep(
    config: &ExperimentConfig,
    base: &Mnist,
    method: MethodName,
    grid: &[f64],
) -> Result<Sweep> {
    if grid.is_empty() {
        return Err(Error::Config("empty λ grid".into()));
    }
    let mut points = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let mut c = config.clone();
        c.methods = vec![method];
        c.lambda.insert(method, lambda);
        let Results { records, .. } = run_sequential(&c, base)?;
        points.push(SweepPoint {
            lambda,
            score: score(&records),
            records,
        });
    }
    Ok(Sweep { method, points })
}
