//! CSV outputs: per-evaluation metrics, per-replicate trajectories, the
//! replicate statistics table, per-metric maxima and theme alignment.

use std::path::Path;

use serde::Serialize;
use traceta_core::evaluator::{paired_stats, Alignment, MetricReport, StatRow, TestStatus, METRIC_NAMES};
use traceta_core::synthesizer::{IterationRecord, RefineOutcome};

use crate::error::CliResult;

/// Name of the composite row in the statistics tables.
pub const OVERALL: &str = "overall";

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub evaluation: String,
    pub reusability: f64,
    pub fitness: f64,
    pub coverage: f64,
    pub parsimony: f64,
    pub consistency: f64,
    pub composite: f64,
    pub judge_sample_size: usize,
}

impl MetricsRow {
    pub fn new(evaluation: impl Into<String>, r: &MetricReport) -> Self {
        Self {
            evaluation: evaluation.into(),
            reusability: r.reusability,
            fitness: r.fitness,
            coverage: r.coverage,
            parsimony: r.parsimony,
            consistency: r.consistency,
            composite: r.composite,
            judge_sample_size: r.judge_sample_size,
        }
    }
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> CliResult<()> {
    write_rows(path, rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub iteration: usize,
    pub snapshot_aid: u64,
    pub n_codes: usize,
    pub n_subthemes: usize,
    pub n_themes: usize,
    pub reusability: f64,
    pub fitness: f64,
    pub coverage: f64,
    pub parsimony: f64,
    pub consistency: f64,
    pub composite: f64,
    pub jaccard_vs_prev: f64,
    pub edits_proposed: usize,
    pub edits_applied: usize,
    pub substantive_edits: usize,
    pub is_best: bool,
}

pub fn trajectory_rows(records: &[IterationRecord], best: usize) -> Vec<TrajectoryRow> {
    records
        .iter()
        .map(|r| TrajectoryRow {
            iteration: r.iteration,
            snapshot_aid: r.snapshot_aid,
            n_codes: r.n_codes,
            n_subthemes: r.n_subthemes,
            n_themes: r.n_themes,
            reusability: r.report.reusability,
            fitness: r.report.fitness,
            coverage: r.report.coverage,
            parsimony: r.report.parsimony,
            consistency: r.report.consistency,
            composite: r.report.composite,
            jaccard_vs_prev: r.jaccard_vs_prev,
            edits_proposed: r.edits_proposed,
            edits_applied: r.edits_applied,
            substantive_edits: r.substantive_edits,
            is_best: r.iteration == best,
        })
        .collect()
}

pub fn write_trajectory(path: &Path, outcome: &RefineOutcome) -> CliResult<()> {
    write_rows(path, &trajectory_rows(&outcome.records, outcome.best))
}

/// One row of the replicate table: mean Iter-1 and Best values, the paired
/// test and the effect size. Skipped tests print `---`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsCsvRow {
    pub metric: String,
    pub iter1: f64,
    pub best: f64,
    pub delta: f64,
    pub t: String,
    pub p: String,
    pub sig: String,
    pub d: String,
    pub effect: String,
    pub n: usize,
    pub df: usize,
    pub status: String,
}

fn fmt_stat(x: Option<f64>) -> String {
    match x {
        Some(v) if v.is_infinite() => if v > 0.0 { "inf".into() } else { "-inf".into() },
        Some(v) => format!("{v:.6}"),
        None => "---".into(),
    }
}

impl From<&StatRow> for StatsCsvRow {
    fn from(s: &StatRow) -> Self {
        let status = match s.status {
            TestStatus::Tested => "tested",
            TestStatus::ZeroDelta => "zero_delta",
            TestStatus::ZeroVariance => "zero_variance",
            TestStatus::InsufficientN => "insufficient_n",
        };
        Self {
            metric: s.metric.clone(),
            iter1: s.mean_iter1,
            best: s.mean_best,
            delta: s.delta,
            t: fmt_stat(s.t),
            p: fmt_stat(s.p),
            sig: s.significance().to_string(),
            d: fmt_stat(s.cohens_d),
            effect: s.effect().map(|e| e.as_str().to_string()).unwrap_or_else(|| "---".into()),
            n: s.n,
            df: s.df(),
            status: status.into(),
        }
    }
}

/// Value of `metric` (one of the five names or [`OVERALL`]) in a report.
pub fn metric_value(r: &MetricReport, metric: &str) -> f64 {
    match metric {
        "reusability" => r.reusability,
        "fitness" => r.fitness,
        "coverage" => r.coverage,
        "parsimony" => r.parsimony,
        "consistency" => r.consistency,
        _ => r.composite,
    }
}

fn all_metrics() -> impl Iterator<Item = &'static str> {
    METRIC_NAMES.iter().copied().chain(std::iter::once(OVERALL))
}

fn record_of(o: &RefineOutcome, iteration: usize) -> &IterationRecord {
    o.records.iter().find(|r| r.iteration == iteration).expect("best iteration is recorded")
}

/// Paired Iter-1 vs Best statistics across replicates, where Best is each
/// replicate's best-composite iteration.
pub fn replicate_stats(outcomes: &[RefineOutcome]) -> CliResult<Vec<StatRow>> {
    all_metrics()
        .map(|m| {
            let a: Vec<f64> = outcomes.iter().map(|o| metric_value(&o.records[0].report, m)).collect();
            let b: Vec<f64> = outcomes.iter().map(|o| metric_value(&record_of(o, o.best).report, m)).collect();
            paired_stats(m, &a, &b).map_err(|e| crate::error::CliError::Config(e.to_string()))
        })
        .collect()
}

pub fn write_stats(path: &Path, rows: &[StatRow]) -> CliResult<()> {
    write_rows(path, &rows.iter().map(StatsCsvRow::from).collect::<Vec<_>>())
}

/// Per-metric maximum over all iterations, averaged across replicates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaximaRow {
    pub metric: String,
    pub mean_iter1: f64,
    pub mean_max: f64,
    pub delta: f64,
}

pub fn metric_maxima(outcomes: &[RefineOutcome]) -> Vec<MaximaRow> {
    let n = outcomes.len().max(1) as f64;
    all_metrics()
        .map(|m| {
            let iter1 = outcomes.iter().map(|o| metric_value(&o.records[0].report, m)).sum::<f64>() / n;
            let max = outcomes.iter().map(|o| o.records.iter().map(|r| metric_value(&r.report, m)).fold(f64::NEG_INFINITY, f64::max)).sum::<f64>() / n;
            MaximaRow { metric: m.to_string(), mean_iter1: iter1, mean_max: max, delta: max - iter1 }
        })
        .collect()
}

pub fn write_maxima(path: &Path, rows: &[MaximaRow]) -> CliResult<()> {
    write_rows(path, rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct AlignCsvRow<'a> {
    generated: &'a str,
    closest_human: &'a str,
    similarity: f64,
}

pub fn write_alignment(path: &Path, a: &Alignment) -> CliResult<()> {
    let rows: Vec<AlignCsvRow> = a.rows.iter().map(|r| AlignCsvRow { generated: &r.generated, closest_human: &r.closest_human, similarity: r.similarity }).collect();
    write_rows(path, &rows)
}
