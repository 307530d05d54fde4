//! Seeded regret experiments with per-trial CSV persistence.
//!
//! Layout under the output directory:
//! - `trials/<function>__<method>__<trial>.csv`, written as each trial finishes
//! - `regret_<function>__<method>.csv`, the trials merged in trial order
//! - `summary.csv`, per-iteration mean and standard error over trials
//! - `errors.csv`, one row per aborted trial

use std::fs;
use std::path::Path;

use prefbo_core::bench::BenchmarkFunction;
use prefbo_core::bo::{run_bo, MethodSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{function_label, method_label, ExperimentConfig};
use crate::error::Result;

/// One CSV row; the column order is the file format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretRow {
    pub function: String,
    pub method: String,
    pub trial: usize,
    pub iteration: usize,
    pub elapsed_seconds: f64,
    pub regret: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub function: String,
    pub method: String,
    pub trial: usize,
    /// First iteration that did not complete.
    pub iteration: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub function: String,
    pub method: String,
    pub iteration: usize,
    pub trials: usize,
    pub mean_regret: f64,
    pub std_error: f64,
    pub mean_elapsed_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrialResult {
    pub rows: Vec<RegretRow>,
    pub error: Option<ErrorRow>,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    /// In (function, method, trial) order.
    pub trials: Vec<TrialResult>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentResult {
    /// Last recorded regret of every trial of `(function, method)`.
    pub fn final_regrets(&self, function: &str, method: &str) -> Vec<f64> {
        self.trials
            .iter()
            .filter_map(|t| t.rows.last())
            .filter(|r| r.function == function && r.method == method)
            .map(|r| r.regret)
            .collect()
    }

    pub fn errors(&self) -> impl Iterator<Item = &ErrorRow> {
        self.trials.iter().filter_map(|t| t.error.as_ref())
    }
}

struct Task {
    function: BenchmarkFunction,
    function_label: String,
    method: MethodSpec,
    method_label: String,
    trial: usize,
}

fn run_trial(task: &Task, cfg: &ExperimentConfig) -> TrialResult {
    let seed = cfg.seed_base + task.trial as u64;
    let to_row = |iteration, elapsed_seconds, regret| RegretRow {
        function: task.function_label.clone(),
        method: task.method_label.clone(),
        trial: task.trial,
        iteration,
        elapsed_seconds,
        regret,
    };
    let error = |iteration, message| ErrorRow {
        function: task.function_label.clone(),
        method: task.method_label.clone(),
        trial: task.trial,
        iteration,
        message,
    };
    match run_bo(&task.function, &task.method, &cfg.bo, cfg.iterations, seed) {
        Ok(h) => {
            let rows: Vec<RegretRow> = h
                .rows
                .iter()
                .map(|r| to_row(r.iteration, r.elapsed_seconds, r.regret))
                .collect();
            let next = rows.len();
            TrialResult {
                rows,
                error: h.error.map(|m| error(next, m)),
            }
        }
        Err(e) => TrialResult {
            rows: Vec::new(),
            error: Some(error(0, e.to_string())),
        },
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub const REGRET_HEADER: [&str; 6] = ["function", "method", "trial", "iteration", "elapsed_seconds", "regret"];
const ERROR_HEADER: [&str; 5] = ["function", "method", "trial", "iteration", "message"];
const SUMMARY_HEADER: [&str; 7] = [
    "function",
    "method",
    "iteration",
    "trials",
    "mean_regret",
    "std_error",
    "mean_elapsed_seconds",
];

/// Per-iteration mean and standard error (`sd / √n`, zero for a single trial).
pub fn summarize(rows: &[RegretRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(&str, &str, usize)> = rows
        .iter()
        .map(|r| (r.function.as_str(), r.method.as_str(), r.iteration))
        .collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(f, m, it)| {
            let group: Vec<&RegretRow> = rows
                .iter()
                .filter(|r| r.function == f && r.method == m && r.iteration == it)
                .collect();
            let n = group.len() as f64;
            let mean = group.iter().map(|r| r.regret).sum::<f64>() / n;
            let std_error = if group.len() > 1 {
                let ss = group.iter().map(|r| (r.regret - mean).powi(2)).sum::<f64>();
                (ss / (n - 1.0)).sqrt() / n.sqrt()
            } else {
                0.0
            };
            SummaryRow {
                function: f.to_owned(),
                method: m.to_owned(),
                iteration: it,
                trials: group.len(),
                mean_regret: mean,
                std_error,
                mean_elapsed_seconds: group.iter().map(|r| r.elapsed_seconds).sum::<f64>() / n,
            }
        })
        .collect()
}

/// Runs every (function, method, trial) on `workers` threads; writes CSVs when `out` is given.
pub fn run_regret_experiment(cfg: &ExperimentConfig, workers: usize, out: Option<&Path>) -> Result<ExperimentResult> {
    cfg.validate()?;
    let mut tasks = Vec::new();
    for f in &cfg.functions {
        let function = f.build()?;
        for m in &cfg.methods {
            for trial in 0..cfg.trials {
                tasks.push(Task {
                    function_label: function_label(&function),
                    function: function.clone(),
                    method: *m,
                    method_label: method_label(m),
                    trial,
                });
            }
        }
    }
    let trial_dir = out.map(|o| o.join("trials"));
    if let Some(dir) = &trial_dir {
        fs::create_dir_all(dir)?;
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build()?;
    let trials: Vec<TrialResult> = pool.install(|| {
        tasks
            .par_iter()
            .map(|task| {
                let result = run_trial(task, cfg);
                if let Some(dir) = &trial_dir {
                    let name = format!("{}__{}__{}.csv", task.function_label, task.method_label, task.trial);
                    write_csv(&dir.join(name), &result.rows, &REGRET_HEADER)?;
                }
                Ok(result)
            })
            .collect::<Result<_>>()
    })?;
    let all_rows: Vec<RegretRow> = trials.iter().flat_map(|t| t.rows.iter().cloned()).collect();
    let summary = summarize(&all_rows);
    if let Some(out) = out {
        for chunk in trials.chunks(cfg.trials) {
            let Some(first) = chunk.iter().find_map(|t| t.rows.first()) else {
                continue;
            };
            let rows: Vec<RegretRow> = chunk.iter().flat_map(|t| t.rows.iter().cloned()).collect();
            let name = format!("regret_{}__{}.csv", first.function, first.method);
            write_csv(&out.join(name), &rows, &REGRET_HEADER)?;
        }
        write_csv(&out.join("summary.csv"), &summary, &SUMMARY_HEADER)?;
        let errors: Vec<ErrorRow> = trials.iter().filter_map(|t| t.error.clone()).collect();
        write_csv(&out.join("errors.csv"), &errors, &ERROR_HEADER)?;
    }
    Ok(ExperimentResult { trials, summary })
}
