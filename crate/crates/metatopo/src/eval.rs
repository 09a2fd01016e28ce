//! Benchmark harness: runs methods over a test dataset, builds Dolan-More
//! performance profiles and thresholding-impact statistics.

use crate::network::NetworkParameters;
use crate::optim::{
    network_initial_design, neural_optimize, standard_optimize, OptimizeConfig, StopReason,
};
use crate::taskgen::Task;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("results table is empty")]
    EmptyTable,
    #[error("results table is not rectangular: {0}")]
    NotRectangular(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(#[from] crate::io::FormatError),
}

/// Outcome tag of a benchmark run; `Failed` marks pairs whose optimization
/// errored out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunOutcome {
    Criterion,
    Budget,
    Failed,
}

impl RunOutcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunOutcome::Criterion => "criterion",
            RunOutcome::Budget => "budget",
            RunOutcome::Failed => "failed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "criterion" => Some(RunOutcome::Criterion),
            "budget" => Some(RunOutcome::Budget),
            "failed" => Some(RunOutcome::Failed),
            _ => None,
        }
    }
}

impl From<StopReason> for RunOutcome {
    fn from(r: StopReason) -> Self {
        match r {
            StopReason::Criterion => RunOutcome::Criterion,
            StopReason::Budget => RunOutcome::Budget,
        }
    }
}

/// One (task, method) cell of the results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub task_id: u64,
    pub method: String,
    pub iterations: usize,
    pub outcome: RunOutcome,
    pub c_continuous: f64,
    pub c_thresholded: f64,
}

/// Rectangular per-(task, method) metrics; failures are marked, not dropped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

impl ResultsTable {
    /// Method names in order of first appearance.
    pub fn methods(&self) -> Vec<String> {
        let mut out = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.method) {
                out.push(r.method.clone());
            }
        }
        out
    }

    /// Task ids in order of first appearance.
    pub fn task_ids(&self) -> Vec<u64> {
        let mut out = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.task_id) {
                out.push(r.task_id);
            }
        }
        out
    }

    fn cell(&self, task_id: u64, method: &str) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.task_id == task_id && r.method == method)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileMetric {
    Iterations,
    ContinuousCompliance,
    ThresholdedCompliance,
}

impl ProfileMetric {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProfileMetric::Iterations => "iterations",
            ProfileMetric::ContinuousCompliance => "c-cont",
            ProfileMetric::ThresholdedCompliance => "c-thresh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "iterations" => Some(ProfileMetric::Iterations),
            "c-cont" => Some(ProfileMetric::ContinuousCompliance),
            "c-thresh" => Some(ProfileMetric::ThresholdedCompliance),
            _ => None,
        }
    }

    fn value(&self, row: &ResultRow) -> f64 {
        if row.outcome == RunOutcome::Failed {
            return f64::INFINITY;
        }
        let v = match self {
            ProfileMetric::Iterations => row.iterations as f64,
            ProfileMetric::ContinuousCompliance => row.c_continuous,
            ProfileMetric::ThresholdedCompliance => row.c_thresholded,
        };
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    }
}

/// Cumulative fraction of tasks a method solves within a ratio of the
/// per-task best, as a right-continuous step function. Breakpoints are the
/// method's finite performance ratios (1.0 always included).
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileCurve {
    pub method: String,
    pub metric: String,
    /// `(tau, fraction)` with non-decreasing fractions, defined for
    /// tolerance >= 1.
    pub points: Vec<(f64, f64)>,
}

impl ProfileCurve {
    /// Fraction of tasks covered at tolerance `tau`.
    pub fn fraction_at(&self, tau: f64) -> f64 {
        let mut out = 0.0;
        for &(t, f) in &self.points {
            if t <= tau {
                out = f;
            } else {
                break;
            }
        }
        out
    }
}

/// Per-task performance ratios `metric / best-over-methods`, with failed
/// runs at infinity. Ties at the minimum count as wins for every tied
/// method.
pub fn performance_ratios(
    table: &ResultsTable,
    metric: ProfileMetric,
) -> Result<Vec<(String, Vec<f64>)>, EvalError> {
    if table.rows.is_empty() {
        return Err(EvalError::EmptyTable);
    }
    let methods = table.methods();
    let tasks = table.task_ids();
    let mut values = vec![vec![f64::INFINITY; tasks.len()]; methods.len()];
    for (mi, m) in methods.iter().enumerate() {
        for (ti, &t) in tasks.iter().enumerate() {
            let row = table.cell(t, m).ok_or_else(|| {
                EvalError::NotRectangular(format!("missing cell task={t} method={m}"))
            })?;
            values[mi][ti] = metric.value(row);
        }
    }
    if table.rows.len() != methods.len() * tasks.len() {
        return Err(EvalError::NotRectangular(format!(
            "{} rows for {} methods x {} tasks",
            table.rows.len(),
            methods.len(),
            tasks.len()
        )));
    }
    let mut out = Vec::with_capacity(methods.len());
    for (mi, m) in methods.iter().enumerate() {
        let mut ratios = Vec::with_capacity(tasks.len());
        for ti in 0..tasks.len() {
            let best = (0..methods.len())
                .map(|k| values[k][ti])
                .fold(f64::INFINITY, f64::min);
            ratios.push(if values[mi][ti].is_finite() && best.is_finite() {
                values[mi][ti] / best
            } else {
                f64::INFINITY
            });
        }
        out.push((m.clone(), ratios));
    }
    Ok(out)
}

/// Dolan-More performance profile of every method in the table.
pub fn performance_profile(
    table: &ResultsTable,
    metric: ProfileMetric,
) -> Result<Vec<ProfileCurve>, EvalError> {
    let ratios = performance_ratios(table, metric)?;
    let n_tasks = table.task_ids().len();
    Ok(ratios
        .into_iter()
        .map(|(method, rs)| {
            let mut breaks: Vec<f64> = rs.iter().cloned().filter(|r| r.is_finite()).collect();
            breaks.push(1.0);
            breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
            breaks.dedup();
            let points = breaks
                .into_iter()
                .map(|tau| {
                    let covered = rs.iter().filter(|&&r| r <= tau).count();
                    (tau, covered as f64 / n_tasks as f64)
                })
                .collect();
            ProfileCurve {
                method,
                metric: metric.as_str().to_string(),
                points,
            }
        })
        .collect())
}

/// Mean percent compliance change induced by thresholding, per method.
/// Improvement (lower compliance) is negative. Tasks where the absolute
/// change exceeds 50% are excluded; failed runs are skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdStats {
    pub method: String,
    /// `None` when every task was excluded.
    pub mean_percent_change: Option<f64>,
    pub included: usize,
    pub excluded: usize,
}

pub fn threshold_stats(table: &ResultsTable) -> Vec<ThresholdStats> {
    table
        .methods()
        .into_iter()
        .map(|method| {
            let mut sum = 0.0;
            let mut included = 0usize;
            let mut excluded = 0usize;
            for row in table.rows.iter().filter(|r| r.method == method) {
                if row.outcome == RunOutcome::Failed {
                    continue;
                }
                let pct = 100.0 * (row.c_thresholded - row.c_continuous) / row.c_continuous;
                if pct.abs() > 50.0 {
                    excluded += 1;
                } else {
                    sum += pct;
                    included += 1;
                }
            }
            ThresholdStats {
                method,
                mean_percent_change: (included > 0).then(|| sum / included as f64),
                included,
                excluded,
            }
        })
        .collect()
}

/// How a benchmark method produces a design for a task.
#[derive(Debug, Clone)]
pub enum MethodSpec {
    /// Neural optimization from the given parameters.
    Neural(NetworkParameters),
    /// Conventional MMA optimization from the uniform design.
    MmaUniform,
    /// Conventional MMA optimization initialized with the network's
    /// continuous design for the task.
    MmaFromNetwork(NetworkParameters),
}

#[derive(Debug, Clone)]
pub struct BenchMethod {
    pub name: String,
    pub spec: MethodSpec,
}

fn run_pair(task: &Task, method: &BenchMethod, config: &OptimizeConfig) -> ResultRow {
    let outcome = match &method.spec {
        MethodSpec::Neural(params) => {
            neural_optimize(task, params.clone(), config).map(|(record, _)| record)
        }
        MethodSpec::MmaUniform => standard_optimize(task, config, None),
        MethodSpec::MmaFromNetwork(params) => network_initial_design(params, task, config)
            .and_then(|init| standard_optimize(task, config, Some(&init))),
    };
    match outcome {
        Ok(record) => ResultRow {
            task_id: task.id,
            method: method.name.clone(),
            iterations: record.iterations,
            outcome: record.stop_reason.into(),
            c_continuous: record.c_continuous,
            c_thresholded: record.c_thresholded,
        },
        Err(_) => ResultRow {
            task_id: task.id,
            method: method.name.clone(),
            iterations: 0,
            outcome: RunOutcome::Failed,
            c_continuous: f64::NAN,
            c_thresholded: f64::NAN,
        },
    }
}

/// Executes every (task, method) pair with a shared stopping configuration.
/// When `out` is given, rows already present there are skipped and new rows
/// are appended in deterministic order as chunks complete, so an
/// interrupted benchmark resumes without recomputation.
pub fn run_benchmark(
    tasks: &[Task],
    methods: &[BenchMethod],
    config: &OptimizeConfig,
    out: Option<&Path>,
) -> Result<ResultsTable, EvalError> {
    let mut table = ResultsTable::default();
    let mut done: HashSet<(u64, String)> = HashSet::new();
    if let Some(path) = out {
        if path.exists() {
            table = crate::io::results::read(path)?;
            for r in &table.rows {
                done.insert((r.task_id, r.method.clone()));
            }
        }
    }

    let pending: Vec<(usize, usize)> = (0..tasks.len())
        .flat_map(|ti| (0..methods.len()).map(move |mi| (ti, mi)))
        .filter(|(ti, mi)| !done.contains(&(tasks[*ti].id, methods[*mi].name.clone())))
        .collect();

    let mut appender = match out {
        Some(path) => {
            let fresh = !path.exists();
            let mut file = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)?;
            if fresh {
                file.write_all(crate::io::results::HEADER.as_bytes())?;
            }
            Some(file)
        }
        None => None,
    };

    // chunked so interrupts lose at most one chunk; rows land in pair order
    for chunk in pending.chunks(16) {
        let rows: Vec<ResultRow> = chunk
            .par_iter()
            .map(|&(ti, mi)| run_pair(&tasks[ti], &methods[mi], config))
            .collect();
        if let Some(file) = appender.as_mut() {
            let mut text = String::new();
            for row in &rows {
                text.push_str(&crate::io::results::row_line(row));
            }
            file.write_all(text.as_bytes())?;
            file.flush()?;
        }
        table.rows.extend(rows);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;

    fn row(task_id: u64, method: &str, value: f64) -> ResultRow {
        ResultRow {
            task_id,
            method: method.to_string(),
            iterations: value as usize,
            outcome: RunOutcome::Criterion,
            c_continuous: value,
            c_thresholded: value,
        }
    }

    /// Direct enumeration over every (method, tau) pair, quadratic in
    /// methods; independent of the production path.
    fn brute_force_profile(
        table: &ResultsTable,
        metric: ProfileMetric,
    ) -> Vec<(String, Vec<(f64, f64)>)> {
        let methods = table.methods();
        let tasks = table.task_ids();
        let value = |t: u64, m: &str| metric.value(table.cell(t, m).unwrap());
        let mut out = Vec::new();
        for m in &methods {
            let mut ratios = Vec::new();
            for &t in &tasks {
                let mut best = f64::INFINITY;
                for m2 in &methods {
                    best = best.min(value(t, m2));
                }
                let v = value(t, m);
                ratios.push(if v.is_finite() && best.is_finite() {
                    v / best
                } else {
                    f64::INFINITY
                });
            }
            let mut taus: Vec<f64> = ratios.iter().cloned().filter(|r| r.is_finite()).collect();
            taus.push(1.0);
            taus.sort_by(|a, b| a.partial_cmp(b).unwrap());
            taus.dedup();
            let pts: Vec<(f64, f64)> = taus
                .iter()
                .map(|&tau| {
                    let mut c = 0usize;
                    for &r in &ratios {
                        if r <= tau {
                            c += 1;
                        }
                    }
                    (tau, c as f64 / tasks.len() as f64)
                })
                .collect();
            out.push((m.clone(), pts));
        }
        out
    }

    #[test]
    fn single_method_profile_is_constant_one() {
        let table = ResultsTable {
            rows: vec![row(1, "a", 10.0), row(2, "a", 5.0), row(3, "a", 7.0)],
        };
        let curves = performance_profile(&table, ProfileMetric::Iterations).unwrap();
        assert_eq!(curves.len(), 1);
        assert_eq!(curves[0].points, vec![(1.0, 1.0)]);
        assert_eq!(curves[0].fraction_at(3.0), 1.0);
    }

    #[test]
    fn two_method_worked_example() {
        // per task (a, b): (10, 20), (30, 15), (12, 12)
        let table = ResultsTable {
            rows: vec![
                row(1, "a", 10.0),
                row(1, "b", 20.0),
                row(2, "a", 30.0),
                row(2, "b", 15.0),
                row(3, "a", 12.0),
                row(3, "b", 12.0),
            ],
        };
        let curves = performance_profile(&table, ProfileMetric::Iterations).unwrap();
        let a = &curves[0];
        let b = &curves[1];
        // tie on task 3 counts as a win for both
        assert_eq!(a.fraction_at(1.0), 2.0 / 3.0);
        assert_eq!(b.fraction_at(1.0), 2.0 / 3.0);
        // win fractions over-count: 4/3 > 1
        assert!(a.fraction_at(1.0) + b.fraction_at(1.0) > 1.0);
        assert_eq!(a.fraction_at(1.5), 2.0 / 3.0);
        assert_eq!(b.fraction_at(1.5), 2.0 / 3.0);
        // ratio 2.0 is included by <=
        assert_eq!(a.fraction_at(2.0), 1.0);
        assert_eq!(b.fraction_at(2.0), 1.0);

        let oracle = brute_force_profile(&table, ProfileMetric::Iterations);
        for (curve, (om, opts)) in curves.iter().zip(oracle.iter()) {
            assert_eq!(&curve.method, om);
            assert_eq!(&curve.points, opts);
        }
    }

    #[test]
    fn profile_matches_brute_force_oracle_on_random_tables() {
        let mut rng = substream(55, "eval-test");
        for _ in 0..40 {
            let n_tasks = rng.gen_range(1..=12);
            let n_methods = rng.gen_range(1..=4);
            let mut rows = Vec::new();
            for t in 0..n_tasks {
                for m in 0..n_methods {
                    let failed = rng.gen_bool(0.05);
                    let v = rng.gen_range(1.0..50.0f64).round();
                    rows.push(ResultRow {
                        task_id: t as u64,
                        method: format!("m{m}"),
                        iterations: v as usize,
                        outcome: if failed {
                            RunOutcome::Failed
                        } else {
                            RunOutcome::Criterion
                        },
                        c_continuous: v,
                        c_thresholded: v,
                    });
                }
            }
            let table = ResultsTable { rows };
            let got = performance_profile(&table, ProfileMetric::Iterations).unwrap();
            let oracle = brute_force_profile(&table, ProfileMetric::Iterations);
            for (curve, (om, opts)) in got.iter().zip(oracle.iter()) {
                assert_eq!(&curve.method, om);
                assert_eq!(&curve.points, opts, "table {table:?}");
            }
            // monotone, within [0,1], breakpoints >= 1
            for curve in &got {
                let mut prev = 0.0;
                for &(tau, f) in &curve.points {
                    assert!(tau >= 1.0);
                    assert!((0.0..=1.0).contains(&f));
                    assert!(f >= prev);
                    prev = f;
                }
            }
        }
    }

    #[test]
    fn curve_saturates_at_the_success_fraction() {
        // one failed cell: the method's curve tops out below 1
        let mut rows = vec![
            row(1, "a", 10.0),
            row(2, "a", 12.0),
            row(1, "b", 11.0),
            row(2, "b", 9.0),
        ];
        rows[1].outcome = RunOutcome::Failed;
        let table = ResultsTable { rows };
        let curves = performance_profile(&table, ProfileMetric::Iterations).unwrap();
        let a = curves.iter().find(|c| c.method == "a").unwrap();
        let b = curves.iter().find(|c| c.method == "b").unwrap();
        assert_eq!(a.fraction_at(1e12), 0.5);
        assert_eq!(b.fraction_at(1e12), 1.0);
    }

    #[test]
    fn missing_cells_are_detected() {
        let table = ResultsTable {
            rows: vec![row(1, "a", 10.0), row(1, "b", 20.0), row(2, "a", 30.0)],
        };
        assert!(matches!(
            performance_profile(&table, ProfileMetric::Iterations),
            Err(EvalError::NotRectangular(_))
        ));
        assert!(matches!(
            performance_profile(&ResultsTable::default(), ProfileMetric::Iterations),
            Err(EvalError::EmptyTable)
        ));
    }

    #[test]
    fn threshold_stats_exclusion_rule() {
        let mk = |task_id, cc: f64, ct: f64| ResultRow {
            task_id,
            method: "m".into(),
            iterations: 10,
            outcome: RunOutcome::Criterion,
            c_continuous: cc,
            c_thresholded: ct,
        };
        // changes -10%, -4%, +80% -> mean of {-10, -4} = -7, one excluded
        let table = ResultsTable {
            rows: vec![mk(1, 100.0, 90.0), mk(2, 100.0, 96.0), mk(3, 100.0, 180.0)],
        };
        let stats = threshold_stats(&table);
        assert_eq!(stats.len(), 1);
        assert_eq!(stats[0].excluded, 1);
        assert_eq!(stats[0].included, 2);
        assert!((stats[0].mean_percent_change.unwrap() + 7.0).abs() < 1e-12);

        // unchanged compliance -> mean zero, none excluded
        let table = ResultsTable {
            rows: vec![mk(1, 50.0, 50.0), mk(2, 70.0, 70.0)],
        };
        let stats = threshold_stats(&table);
        assert_eq!(stats[0].excluded, 0);
        assert_eq!(stats[0].mean_percent_change.unwrap(), 0.0);
    }
}
