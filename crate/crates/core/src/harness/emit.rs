//! Result files.
//!
//! * `records.csv` – one row per evaluation point:
//!   `pass,method,training_task,global_step,task_0_acc,…,task_{K-1}_acc,mean_acc`
//! * `records.json` – config echo, per-pass seeds and the full records
//! * `aggregate.csv` – mean and sample standard deviation across passes per
//!   (method, training_task, global_step), failed runs excluded
//! * `summary.csv` – per method, end-of-sequence accuracies and retention
//!
//! Output depends only on the records, so identical runs give identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::methods::MethodName;

use super::record::{EvalRow, Results, RunRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

pub const RECORDS_CSV: &str = "records.csv";
pub const RECORDS_JSON: &str = "records.json";
pub const AGGREGATE_CSV: &str = "aggregate.csv";
pub const SUMMARY_CSV: &str = "summary.csv";

/// Mean and sample standard deviation (`n − 1` denominator; 0 for one value).
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn num_tasks(rows: &[&EvalRow]) -> usize {
    rows.first().map_or(0, |r| r.task_acc.len())
}

pub fn records_csv(records: &[RunRecord]) -> String {
    let rows: Vec<&EvalRow> = records.iter().flat_map(|r| &r.rows).collect();
    rows_csv(&rows)
}

fn rows_csv(rows: &[&EvalRow]) -> String {
    let k = num_tasks(rows);
    let mut out = String::from("pass,method,training_task,global_step");
    for j in 0..k {
        let _ = write!(out, ",task_{j}_acc");
    }
    out.push_str(",mean_acc\n");
    for r in rows {
        let _ = write!(
            out,
            "{},{},{},{}",
            r.pass, r.method, r.training_task, r.global_step
        );
        for a in &r.task_acc {
            let _ = write!(out, ",{a}");
        }
        let _ = writeln!(out, ",{}", r.mean_acc);
    }
    out
}

/// Parses `records.csv` back into rows.
pub fn parse_records_csv(text: &str) -> Result<Vec<EvalRow>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let k = headers
        .iter()
        .filter(|h| h.starts_with("task_") && h.ends_with("_acc"))
        .count();
    if headers.len() != k + 5 {
        return Err(Error::InvalidInput(format!(
            "unexpected records header: {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::InvalidInput(format!("row {}: bad {what}", line + 1));
        let num = |i: usize, what: &str| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|_| bad(what))
        };
        rows.push(EvalRow {
            pass: rec[0].parse().map_err(|_| bad("pass"))?,
            method: rec[1].parse()?,
            training_task: rec[2].parse().map_err(|_| bad("training_task"))?,
            global_step: rec[3].parse().map_err(|_| bad("global_step"))?,
            task_acc: (0..k)
                .map(|j| num(4 + j, "accuracy"))
                .collect::<Result<_>>()?,
            mean_acc: num(4 + k, "mean_acc")?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub method: MethodName,
    pub training_task: usize,
    pub global_step: usize,
    pub runs: usize,
    pub task_acc: Vec<(f64, f64)>,
    pub mean_acc: (f64, f64),
}

/// Groups rows by (method, training_task, global_step) and reduces each
/// column to mean ± sample sd. Ordered by method, then step.
pub fn aggregate_rows(rows: &[&EvalRow]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(MethodName, usize, usize), Vec<&EvalRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.method, r.global_step, r.training_task))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((method, global_step, training_task), group)| {
            let k = group[0].task_acc.len();
            AggregateRow {
                method,
                training_task,
                global_step,
                runs: group.len(),
                task_acc: (0..k)
                    .map(|j| mean_sd(&group.iter().map(|r| r.task_acc[j]).collect::<Vec<_>>()))
                    .collect(),
                mean_acc: mean_sd(&group.iter().map(|r| r.mean_acc).collect::<Vec<_>>()),
            }
        })
        .collect()
}

/// Completed runs only; failed runs are counted per method.
pub fn aggregate(records: &[RunRecord]) -> (Vec<AggregateRow>, BTreeMap<MethodName, usize>) {
    let mut excluded = BTreeMap::new();
    for r in records {
        let e = excluded.entry(r.method).or_insert(0);
        if !r.is_completed() {
            *e += 1;
        }
    }
    let rows: Vec<&EvalRow> = records
        .iter()
        .filter(|r| r.is_completed())
        .flat_map(|r| &r.rows)
        .collect();
    (aggregate_rows(&rows), excluded)
}

pub fn aggregate_csv(rows: &[AggregateRow], excluded: &BTreeMap<MethodName, usize>) -> String {
    let k = rows.first().map_or(0, |r| r.task_acc.len());
    let mut out = String::from("method,training_task,global_step,runs,excluded_runs");
    for j in 0..k {
        let _ = write!(out, ",task_{j}_acc_mean,task_{j}_acc_sd");
    }
    out.push_str(",mean_acc_mean,mean_acc_sd\n");
    for r in rows {
        let _ = write!(
            out,
            "{},{},{},{},{}",
            r.method,
            r.training_task,
            r.global_step,
            r.runs,
            excluded.get(&r.method).copied().unwrap_or(0)
        );
        for (m, s) in &r.task_acc {
            let _ = write!(out, ",{m},{s}");
        }
        let _ = writeln!(out, ",{},{}", r.mean_acc.0, r.mean_acc.1);
    }
    out
}

/// Per method: final accuracy on each task, final mean accuracy, and the
/// final accuracy of each task as a fraction of its post-training accuracy.
pub fn summary_csv(records: &[RunRecord]) -> String {
    let mut by_method: BTreeMap<MethodName, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        by_method.entry(r.method).or_default().push(r);
    }
    let k = records
        .iter()
        .find_map(|r| r.final_accuracies().map(<[f64]>::len))
        .unwrap_or(0);
    let mut out = String::from("method,lambda,runs,excluded_runs");
    for j in 0..k {
        let _ = write!(out, ",final_task_{j}_acc_mean,final_task_{j}_acc_sd");
    }
    out.push_str(",final_mean_acc_mean,final_mean_acc_sd");
    for j in 0..k {
        let _ = write!(out, ",task_{j}_retention_mean");
    }
    out.push('\n');
    for (method, runs) in by_method {
        let done: Vec<&&RunRecord> = runs.iter().filter(|r| r.is_completed()).collect();
        let _ = write!(
            out,
            "{method},{},{},{}",
            runs[0].lambda,
            done.len(),
            runs.len() - done.len()
        );
        if done.is_empty() {
            out.push('\n');
            continue;
        }
        for j in 0..k {
            let (m, s) = mean_sd(
                &done
                    .iter()
                    .map(|r| r.final_accuracies().expect("completed")[j])
                    .collect::<Vec<_>>(),
            );
            let _ = write!(out, ",{m},{s}");
        }
        let (m, s) = mean_sd(
            &done
                .iter()
                .map(|r| r.final_mean_acc().expect("completed"))
                .collect::<Vec<_>>(),
        );
        let _ = write!(out, ",{m},{s}");
        for j in 0..k {
            let (m, _) = mean_sd(&done.iter().map(|r| r.retention[j]).collect::<Vec<_>>());
            let _ = write!(out, ",{m}");
        }
        out.push('\n');
    }
    out
}

pub fn results_json(results: &Results) -> Result<String> {
    Ok(serde_json::to_string_pretty(results)? + "\n")
}

pub fn parse_results_json(text: &str) -> Result<Results> {
    Ok(serde_json::from_str(text)?)
}

/// Writes the requested formats plus the aggregate and summary files into
/// `dir`, creating it if needed. Returns the paths written.
pub fn emit_results(results: &Results, dir: &Path, formats: &[Format]) -> Result<Vec<PathBuf>> {
    if results.records.is_empty() {
        return Err(Error::InvalidInput("no records to emit".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: &str, contents: String| -> Result<()> {
        let path = dir.join(name);
        write_file(&path, &contents)?;
        written.push(path);
        Ok(())
    };
    if formats.contains(&Format::Csv) {
        put(RECORDS_CSV, records_csv(&results.records))?;
    }
    if formats.contains(&Format::Json) {
        put(RECORDS_JSON, results_json(results)?)?;
    }
    let (rows, excluded) = aggregate(&results.records);
    put(AGGREGATE_CSV, aggregate_csv(&rows, &excluded))?;
    put(SUMMARY_CSV, summary_csv(&results.records))?;
    Ok(written)
}

/// Aggregates prior runs. `.json` inputs honour run status; `.csv` inputs are
/// taken as completed runs.
pub fn report(inputs: &[PathBuf]) -> Result<String> {
    if inputs.is_empty() {
        return Err(Error::InvalidInput("no result files given".into()));
    }
    let mut rows = Vec::new();
    let mut excluded: BTreeMap<MethodName, usize> = BTreeMap::new();
    for path in inputs {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            let results = parse_results_json(&text)?;
            for r in results.records {
                if r.is_completed() {
                    rows.extend(r.rows);
                } else {
                    *excluded.entry(r.method).or_insert(0) += 1;
                }
            }
        } else {
            rows.extend(parse_records_csv(&text)?);
        }
    }
    let k = rows.first().map_or(0, |r| r.task_acc.len());
    if rows.iter().any(|r| r.task_acc.len() != k) {
        return Err(Error::InvalidInput(
            "result files disagree on the number of tasks".into(),
        ));
    }
    let refs: Vec<&EvalRow> = rows.iter().collect();
    Ok(aggregate_csv(&aggregate_rows(&refs), &excluded))
}
