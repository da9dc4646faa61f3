use std::path::{Path, PathBuf};

use log::{info, warn};

use crate::data::{make_permuted_task, make_split_task, Mnist, Permutation, TaskDataset, INPUT_DIM};
use crate::error::{Error, Result};
use crate::methods::{train_task, Control, MethodName, Prior};
use crate::nn::Network;
use crate::rng::derive_seed;
use crate::significance::{
    accumulate_signal, estimate_fisher_diag, take_anchor, Anchor, SignificanceKind,
    SignificanceStore,
};

use super::config::{ExperimentConfig, ExperimentKind};
use super::record::{EarlyStopMark, EvalRow, PassTasks, Results, RunRecord, RunStatus};

const TAG_INIT: u64 = 1;
const TAG_SHUFFLE: u64 = 2;
const TAG_FISHER: u64 = 3;
const TAG_PERMUTATION: u64 = 4;

/// Seeds for one pass. Every method in the pass shares them.
pub fn pass_tasks(config: &ExperimentConfig, pass: usize) -> PassTasks {
    let p = pass as u64;
    let n = config.num_tasks();
    let tasks = match config.experiment {
        ExperimentKind::Permuted => (0..n)
            .map(|t| crate::data::TaskDescriptor::Permuted {
                seed: if t == 0 && config.identity_first_task {
                    None
                } else {
                    Some(derive_seed(config.seed, &[p, TAG_PERMUTATION, t as u64]))
                },
            })
            .collect(),
        ExperimentKind::Split => config
            .split_classes
            .iter()
            .map(|c| {
                let mut classes = c.clone();
                classes.sort_unstable();
                classes.dedup();
                crate::data::TaskDescriptor::Split { classes }
            })
            .collect(),
    };
    PassTasks {
        pass,
        tasks,
        init_seed: derive_seed(config.seed, &[p, TAG_INIT]),
        shuffle_seeds: (0..n)
            .map(|t| derive_seed(config.seed, &[p, TAG_SHUFFLE, t as u64]))
            .collect(),
        fisher_seeds: (0..n)
            .map(|t| derive_seed(config.seed, &[p, TAG_FISHER, t as u64]))
            .collect(),
    }
}

pub fn build_tasks(base: &Mnist, seeds: &PassTasks) -> Result<Vec<TaskDataset>> {
    seeds
        .tasks
        .iter()
        .map(|d| match d {
            crate::data::TaskDescriptor::Permuted { seed: None } => {
                make_permuted_task(base, &Permutation::identity(INPUT_DIM))
            }
            crate::data::TaskDescriptor::Permuted { seed: Some(s) } => {
                make_permuted_task(base, &Permutation::from_seed(INPUT_DIM, *s))
            }
            crate::data::TaskDescriptor::Split { classes } => make_split_task(base, classes),
        })
        .collect()
}

pub fn evaluate_all(net: &Network, tasks: &[TaskDataset]) -> Result<Vec<f64>> {
    tasks
        .iter()
        .map(|t| net.evaluate_accuracy(t.test.inputs.view(), &t.test.labels))
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn significance_for(
    kind: SignificanceKind,
    net: &Network,
    task: &TaskDataset,
    config: &ExperimentConfig,
    fisher_seed: u64,
) -> Result<SignificanceStore> {
    match kind {
        SignificanceKind::Signal => accumulate_signal(net, task.train.inputs.view()),
        SignificanceKind::Fisher => estimate_fisher_diag(
            net,
            task.train.inputs.view(),
            &task.train.labels,
            config.fisher_labels,
            fisher_seed,
        ),
    }
}

fn is_numeric_failure(e: &Error) -> bool {
    matches!(e, Error::Numeric(_) | Error::NonFinite { .. })
}

/// Trains one method through the whole task sequence of one pass.
///
/// Numeric blow-ups end the run with a `Failed` status instead of an error;
/// anything else is returned as an error.
pub fn run_unit(
    config: &ExperimentConfig,
    tasks: &[TaskDataset],
    seeds: &PassTasks,
    method: MethodName,
    store_dir: Option<&Path>,
) -> Result<RunRecord> {
    let method_config = config.method_config(method)?;
    let mut net = Network::init(&config.layer_sizes, seeds.init_seed)?;
    if net.input_dim() != INPUT_DIM {
        return Err(Error::Config(format!(
            "first layer must take {INPUT_DIM} inputs, got {}",
            net.input_dim()
        )));
    }
    let mut record = RunRecord {
        pass: seeds.pass,
        method,
        lambda: config.lambda_for(method),
        init_seed: seeds.init_seed,
        status: RunStatus::Completed,
        rows: Vec::new(),
        task_end: Vec::new(),
        retention: Vec::new(),
        early_stop: Vec::new(),
    };
    let row = |global_step: usize, training_task: usize, task_acc: Vec<f64>| EvalRow {
        pass: seeds.pass,
        method,
        training_task,
        global_step,
        mean_acc: mean(&task_acc[..=training_task]),
        task_acc,
    };
    record.rows.push(row(0, 0, evaluate_all(&net, tasks)?));

    let mut anchor: Option<Anchor> = None;
    let mut accumulated: Option<SignificanceStore> = None;
    let mut global_step = 0usize;

    for (t, task) in tasks.iter().enumerate() {
        let prior = match (&anchor, &accumulated) {
            (Some(anchor), Some(significance)) => Some(Prior {
                anchor,
                significance,
            }),
            _ => None,
        };
        let early = config.early_stop.enabled && t > 0;
        let mut best: Option<(f64, usize, Vec<f64>, Network)> = None;
        let mut since_best = 0usize;
        let start = global_step;
        let result = train_task(
            &mut net,
            &task.train,
            &method_config,
            prior,
            &config.schedule(seeds.shuffle_seeds[t]),
            |info, net| {
                let step = start + info.step;
                if !step.is_multiple_of(config.eval_interval) {
                    return Ok(Control::Continue);
                }
                let acc = evaluate_all(net, tasks)?;
                let r = row(step, t, acc);
                let mut control = Control::Continue;
                if early {
                    if best.as_ref().is_none_or(|b| r.mean_acc > b.0) {
                        best = Some((r.mean_acc, step, r.task_acc.clone(), net.clone()));
                        since_best = 0;
                    } else {
                        since_best += 1;
                        if config.early_stop.patience.is_some_and(|p| since_best >= p) {
                            control = Control::Stop;
                        }
                    }
                }
                record.rows.push(r);
                Ok(control)
            },
        );
        let summary = match result {
            Ok(s) => s,
            Err(e) if is_numeric_failure(&e) => {
                warn!("pass {} {method}: task {t} failed: {e}", seeds.pass);
                record.status = RunStatus::Failed {
                    task: t,
                    reason: e.to_string(),
                };
                return Ok(record);
            }
            Err(e) => return Err(e),
        };
        global_step = start + summary.steps;
        if record.rows.last().is_none_or(|r| r.global_step != global_step) {
            let acc = evaluate_all(&net, tasks)?;
            let r = row(global_step, t, acc);
            if early && best.as_ref().is_none_or(|b| r.mean_acc > b.0) {
                best = Some((r.mean_acc, global_step, r.task_acc.clone(), net.clone()));
            }
            record.rows.push(r);
        }
        let last = record.rows.last().expect("row just pushed").clone();
        if let Some((best_mean, best_step, best_acc, best_net)) = best {
            record.early_stop.push(EarlyStopMark {
                task: t,
                global_step: best_step,
                mean_acc: best_mean,
                final_mean_acc: last.mean_acc,
                task_acc: best_acc.clone(),
            });
            net = best_net;
            record.task_end.push(best_acc);
        } else {
            record.task_end.push(last.task_acc);
        }

        let Some(kind) = method.significance_kind() else {
            continue;
        };
        if t + 1 == tasks.len() && store_dir.is_none() {
            continue;
        }
        let mut store = significance_for(kind, &net, task, config, seeds.fisher_seeds[t])?;
        store.source_tasks = vec![t];
        let new_anchor = take_anchor(&net);
        if let Some(dir) = store_dir {
            let stem = format!("pass{}-{method}-task{t}", seeds.pass);
            store.save_json(&dir.join(format!("{stem}-significance.json")))?;
            new_anchor.save_json(&dir.join(format!("{stem}-anchor.json")))?;
        }
        accumulated = Some(match accumulated {
            Some(acc) => acc.merge(&store)?,
            None => store,
        });
        anchor = Some(new_anchor);
    }

    let n = record.task_end.len();
    record.retention = (0..n)
        .map(|j| {
            let post = record.task_end[j][j];
            if post > 0.0 {
                record.task_end[n - 1][j] / post
            } else {
                0.0
            }
        })
        .collect();
    Ok(record)
}

/// Runs `work` over `items` with at most `jobs` threads, keeping item order.
fn run_ordered<T: Sync, R: Send>(
    items: &[T],
    jobs: usize,
    work: impl Fn(&T) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(&work).collect();
    }
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(jobs) {
        let results: Vec<Result<R>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|item| s.spawn(|| work(item))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker panicked"))
                .collect()
        });
        for r in results {
            out.push(r?);
        }
    }
    Ok(out)
}

fn store_dir(config: &ExperimentConfig) -> Result<Option<PathBuf>> {
    if !config.persist_stores {
        return Ok(None);
    }
    let dir = config.out.join("stores");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(Some(dir))
}

/// All passes × methods over the configured task sequence.
pub fn run_sequential(config: &ExperimentConfig, base: &Mnist) -> Result<Results> {
    config.validate()?;
    let stores = store_dir(config)?;
    let mut passes = Vec::with_capacity(config.passes);
    let mut records = Vec::new();
    for pass in 0..config.passes {
        let seeds = pass_tasks(config, pass);
        let tasks = build_tasks(base, &seeds)?;
        let mut pass_records = run_ordered(&config.methods, config.jobs, |&method| {
            let r = run_unit(config, &tasks, &seeds, method, stores.as_deref());
            if let Ok(r) = &r {
                info!(
                    "pass {pass} {method}: final accuracies {:?}",
                    r.final_accuracies().unwrap_or_default()
                );
            }
            r
        })?;
        records.append(&mut pass_records);
        passes.push(seeds);
    }
    Ok(Results {
        software_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        passes,
        records,
    })
}

/// Split-task run with early stopping on every task after the first: the
/// network is rolled back to the evaluation point with the best mean test
/// accuracy over the tasks trained so far.
pub fn run_split_early_stop(config: &ExperimentConfig, base: &Mnist) -> Result<Results> {
    if config.experiment != ExperimentKind::Split || config.num_tasks() != 2 {
        return Err(Error::Config(
            "early-stopped split runs need a split experiment with exactly two tasks".into(),
        ));
    }
    let mut config = config.clone();
    config.early_stop.enabled = true;
    run_sequential(&config, base)
}

/// Loads the data named by `config`, applies subsampling and runs.
pub fn load_base(config: &ExperimentConfig) -> Result<Mnist> {
    let full = Mnist::load_dir(&config.data_dir)?;
    Ok(full.subsample(config.subsample, config.subsample_test))
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<Results> {
    config.validate()?;
    let base = load_base(config)?;
    if config.experiment == ExperimentKind::Split && config.early_stop.enabled {
        run_split_early_stop(config, &base)
    } else {
        run_sequential(config, &base)
    }
}
