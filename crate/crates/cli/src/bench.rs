//! Benchmark specs: rows of (dataset, height, hyperparameters, expected
//! metric) run through [`crate::commands::train`] and reported as markdown
//! and JSON.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dtsemnet::data::Fractions;
use dtsemnet::optim::OptimConfig;
use dtsemnet::semnet::Task;
use dtsemnet::train::{format_mean_std, AggregateResult};
use serde::{Deserialize, Serialize};

use crate::commands::{self, AGGREGATE_FILE};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSpec {
    pub rows: Vec<BenchRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchRow {
    pub dataset: String,
    #[serde(default)]
    pub task: Option<Task>,
    pub height: usize,
    #[serde(default)]
    pub splits: Option<Fractions>,
    pub optim: OptimConfig,
    /// Number of seeds, run as `0..seeds`.
    pub seeds: u64,
    /// Published metric to compare against.
    pub expected: f64,
    /// Signed offset from `expected` giving the pass threshold: accuracy must
    /// reach `expected + tolerance`, RMSE must not exceed it.
    pub tolerance: f64,
    /// Where `expected` comes from.
    pub provenance: String,
    /// When set, the row passes iff at least this many seeds individually
    /// meet the threshold, instead of comparing the mean.
    #[serde(default)]
    pub min_passing_seeds: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowReport {
    pub dataset: String,
    pub height: usize,
    pub metric: Option<String>,
    /// Regression metrics are RMSE in the target's original units.
    pub units: Option<String>,
    pub seeds: u64,
    pub ours: Option<String>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub passing_seeds: Option<usize>,
    pub expected: f64,
    pub threshold: f64,
    pub provenance: String,
    pub config_hash: Option<String>,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<RowReport>,
}

impl BenchSpec {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let spec: Self = serde_json::from_str(text)
            .map_err(|e| CliError::usage(format!("invalid bench spec: {e}")))?;
        if spec.rows.is_empty() {
            return Err(CliError::usage("bench spec has no rows"));
        }
        for (i, row) in spec.rows.iter().enumerate() {
            row.run_config(None).map_err(|e| {
                CliError::usage(format!("bench row {i} ({}): {}", row.dataset, e.message))
            })?;
        }
        Ok(spec)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            CliError::usage(format!("cannot read bench spec {}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }
}

impl BenchRow {
    pub fn run_config(&self, seeds: Option<&[u64]>) -> CliResult<RunConfig> {
        if self.seeds == 0 && seeds.is_none() {
            return Err(CliError::usage("seeds must be at least 1"));
        }
        let cfg = RunConfig {
            dataset: self.dataset.clone(),
            format: None,
            task: self.task,
            height: self.height,
            seeds: seeds.map_or_else(|| (0..self.seeds).collect(), <[u64]>::to_vec),
            target: None,
            categorical: Vec::new(),
            splits: self.splits,
            optim: self.optim.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn threshold(&self) -> f64 {
        self.expected + self.tolerance
    }

    fn meets(&self, task: Task, value: f64) -> bool {
        match task {
            Task::Classification => value >= self.threshold(),
            Task::Regression => value <= self.threshold(),
        }
    }

    pub fn dir_name(&self) -> String {
        let stem = Path::new(&self.dataset).file_stem().map_or_else(
            || self.dataset.clone(),
            |s| s.to_string_lossy().into_owned(),
        );
        format!("{stem}-h{}", self.height)
    }

    fn blank_report(&self, status: Status, note: String) -> RowReport {
        RowReport {
            dataset: self.dataset.clone(),
            height: self.height,
            metric: None,
            units: None,
            seeds: self.seeds,
            ours: None,
            mean: None,
            std: None,
            passing_seeds: None,
            expected: self.expected,
            threshold: self.threshold(),
            provenance: self.provenance.clone(),
            config_hash: None,
            status,
            note: Some(note),
        }
    }

    fn report(&self, agg: &AggregateResult) -> RowReport {
        let passing = agg
            .per_seed
            .iter()
            .filter(|s| s.metric.is_some_and(|m| self.meets(agg.task, m)))
            .count();
        let ok = !agg.partial
            && match self.min_passing_seeds {
                Some(k) => passing >= k,
                None => self.meets(agg.task, agg.mean),
            };
        RowReport {
            dataset: self.dataset.clone(),
            height: self.height,
            metric: Some(agg.metric.clone()),
            units: (agg.task == Task::Regression).then(|| "original".to_string()),
            seeds: agg.per_seed.len() as u64,
            ours: Some(format_mean_std(agg.task, agg.mean, agg.std)),
            mean: Some(agg.mean),
            std: Some(agg.std),
            passing_seeds: Some(passing),
            expected: self.expected,
            threshold: self.threshold(),
            provenance: self.provenance.clone(),
            config_hash: Some(agg.config_hash.clone()),
            status: if ok { Status::Pass } else { Status::Fail },
            note: commands::failed_seeds(agg),
        }
    }
}

/// Runs one row, writing its artifacts under `out_dir/<dataset>-h<height>`.
/// With `reuse`, an existing aggregate with the same config hash is reported
/// instead of retraining; one with a different hash is refused.
pub fn run_row(row: &BenchRow, out_dir: &Path, seeds: Option<&[u64]>, reuse: bool) -> RowReport {
    let cfg = match row.run_config(seeds) {
        Ok(c) => c,
        Err(e) => return row.blank_report(Status::Error, e.message),
    };
    let dir: PathBuf = out_dir.join(row.dir_name());
    if reuse {
        if let Ok(text) = fs::read_to_string(dir.join(AGGREGATE_FILE)) {
            return match serde_json::from_str::<AggregateResult>(&text) {
                Ok(agg) if agg.config_hash == cfg.hash() => row.report(&agg),
                Ok(agg) => row.blank_report(
                    Status::Error,
                    format!("refusing to compare: stored aggregate has config hash {}, row hashes to {}", agg.config_hash, cfg.hash()),
                ),
                Err(e) => row.blank_report(Status::Error, format!("unreadable aggregate: {e}")),
            };
        }
    }
    if let Some(entry) = dtsemnet::registry::lookup(&row.dataset) {
        if !entry.available() {
            return row.blank_report(
                Status::Skipped,
                format!(
                    "dataset not available; place it at {}",
                    entry.path().display()
                ),
            );
        }
    }
    match commands::train(&cfg, &dir) {
        Ok(agg) => row.report(&agg),
        Err(e) => row.blank_report(Status::Error, e.message),
    }
}

pub fn run_bench(
    spec: &BenchSpec,
    out_dir: &Path,
    seeds: Option<&[u64]>,
    reuse: bool,
) -> BenchReport {
    BenchReport {
        rows: spec
            .rows
            .iter()
            .map(|r| run_row(r, out_dir, seeds, reuse))
            .collect(),
    }
}

impl BenchReport {
    pub fn failed(&self) -> bool {
        self.rows
            .iter()
            .any(|r| matches!(r.status, Status::Fail | Status::Error))
    }

    pub fn to_markdown(&self) -> String {
        let mut out =
            String::from("| dataset | height | metric | ours | published | threshold | status |\n");
        out += "|---|---|---|---|---|---|---|\n";
        for r in &self.rows {
            let metric = match (&r.metric, &r.units) {
                (Some(m), Some(u)) => format!("{m} ({u} units)"),
                (Some(m), None) => m.clone(),
                _ => "-".into(),
            };
            let status = match (&r.status, &r.note) {
                (s, Some(n)) => format!("{s:?}: {n}").to_lowercase(),
                (s, None) => format!("{s:?}").to_lowercase(),
            };
            writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} | {} |",
                r.dataset,
                r.height,
                metric,
                r.ours.as_deref().unwrap_or("-"),
                r.provenance,
                r.threshold,
                status
            )
            .unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(dataset: &str, expected: f64, tolerance: f64, k: Option<usize>) -> BenchRow {
        BenchRow {
            dataset: dataset.into(),
            task: None,
            height: 2,
            splits: None,
            optim: OptimConfig::new(dtsemnet::optim::OptimizerKind::Adam, 0.1, 1, 8),
            seeds: 3,
            expected,
            tolerance,
            provenance: "x".into(),
            min_passing_seeds: k,
        }
    }

    fn agg(task: Task, metrics: &[f64]) -> AggregateResult {
        let (mean, std) = dtsemnet::train::mean_std(metrics);
        AggregateResult {
            config_hash: "h".into(),
            task,
            metric: dtsemnet::train::metric_name(task).into(),
            height: 2,
            mean,
            std,
            summary: String::new(),
            partial: false,
            per_seed: metrics
                .iter()
                .enumerate()
                .map(|(i, m)| dtsemnet::train::SeedMetric {
                    seed: i as u64,
                    metric: Some(*m),
                    error: None,
                })
                .collect(),
        }
    }

    #[test]
    fn thresholds_follow_metric_direction() {
        let r = row("balance_scale", 90.2, -3.2, None);
        assert_eq!(
            r.report(&agg(Task::Classification, &[87.0, 87.0])).status,
            Status::Pass
        );
        assert_eq!(
            r.report(&agg(Task::Classification, &[86.9, 87.0])).status,
            Status::Fail
        );
        let r = row("abalone", 2.135, 0.145, None);
        let rep = r.report(&agg(Task::Regression, &[2.2, 2.3]));
        assert_eq!(rep.status, Status::Pass);
        assert_eq!(rep.units.as_deref(), Some("original"));
        assert_eq!(
            r.report(&agg(Task::Regression, &[2.3, 2.3])).status,
            Status::Fail
        );
    }

    #[test]
    fn per_seed_rule() {
        let r = row("balance_scale", 100.0, 0.0, Some(2));
        let rep = r.report(&agg(Task::Classification, &[100.0, 96.0, 100.0]));
        assert_eq!((rep.status, rep.passing_seeds), (Status::Pass, Some(2)));
        assert_eq!(
            r.report(&agg(Task::Classification, &[100.0, 96.0, 99.0]))
                .status,
            Status::Fail
        );
    }

    #[test]
    fn spec_rejects_unknown_keys_and_bad_rows() {
        let e = BenchSpec::from_json(r#"{"rows":[], "extra": 1}"#).unwrap_err();
        assert!(e.message.contains("extra"));
        assert!(BenchSpec::from_json(r#"{"rows":[]}"#).is_err());
    }
}
