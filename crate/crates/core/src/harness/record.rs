use serde::{Deserialize, Serialize};

use crate::data::TaskDescriptor;
use crate::methods::MethodName;

use super::config::ExperimentConfig;

/// Test accuracies on every task of the sequence at one point of training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub pass: usize,
    pub method: MethodName,
    /// 0-based index of the task being trained when the row was taken.
    pub training_task: usize,
    pub global_step: usize,
    /// One entry per task in the sequence, trained or not.
    pub task_acc: Vec<f64>,
    /// Mean over tasks `0..=training_task`.
    pub mean_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Failed { task: usize, reason: String },
}

/// The checkpoint an early-stopped task was rolled back to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopMark {
    pub task: usize,
    pub global_step: usize,
    pub mean_acc: f64,
    /// Mean accuracy at the last step actually trained.
    pub final_mean_acc: f64,
    pub task_acc: Vec<f64>,
}

/// One pass of one method through the task sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub pass: usize,
    pub method: MethodName,
    pub lambda: f64,
    pub init_seed: u64,
    pub status: RunStatus,
    pub rows: Vec<EvalRow>,
    /// `task_end[i][j]`: accuracy on task `j` once task `i` finished.
    pub task_end: Vec<Vec<f64>>,
    /// Per trained task: final accuracy divided by its accuracy right after
    /// it was trained.
    pub retention: Vec<f64>,
    pub early_stop: Vec<EarlyStopMark>,
}

impl RunRecord {
    pub fn is_completed(&self) -> bool {
        self.status == RunStatus::Completed
    }

    /// Accuracy on every task after the whole sequence.
    pub fn final_accuracies(&self) -> Option<&[f64]> {
        self.task_end.last().map(Vec::as_slice)
    }

    pub fn final_mean_acc(&self) -> Option<f64> {
        self.final_accuracies()
            .map(|a| a.iter().sum::<f64>() / a.len() as f64)
    }

    /// Accuracy on task `j` right after task `j` was trained.
    pub fn post_training_acc(&self, j: usize) -> Option<f64> {
        self.task_end.get(j).map(|row| row[j])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassTasks {
    pub pass: usize,
    pub tasks: Vec<TaskDescriptor>,
    pub init_seed: u64,
    pub shuffle_seeds: Vec<u64>,
    pub fisher_seeds: Vec<u64>,
}

/// Everything written to `records.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Results {
    pub software_version: String,
    pub config: ExperimentConfig,
    pub passes: Vec<PassTasks>,
    pub records: Vec<RunRecord>,
}
