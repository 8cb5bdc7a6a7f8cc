//! Run configuration files and dataset resolution.

use std::path::{Path, PathBuf};

use dtsemnet::data::{Dataset, Format, Fractions, Schema};
use dtsemnet::optim::OptimConfig;
use dtsemnet::registry;
use dtsemnet::semnet::Task;
use dtsemnet::train::{config_hash, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Largest supported tree height; `2^h` leaves must stay addressable.
pub const MAX_HEIGHT: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Registry name or path to a CSV/LIBSVM file.
    pub dataset: String,
    #[serde(default)]
    pub format: Option<Format>,
    #[serde(default)]
    pub task: Option<Task>,
    pub height: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default)]
    pub categorical: Vec<String>,
    /// `[train, val, test]` fractions.
    #[serde(default)]
    pub splits: Option<Fractions>,
    pub optim: OptimConfig,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| CliError::usage(format!("invalid run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        // Relative dataset paths are taken from the config file's directory.
        if registry::lookup(&cfg.dataset).is_none() && Path::new(&cfg.dataset).is_relative() {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                cfg.dataset = dir.join(&cfg.dataset).to_string_lossy().into_owned();
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if !(1..=MAX_HEIGHT).contains(&self.height) {
            return Err(CliError::usage(format!(
                "height must be in 1..={MAX_HEIGHT}, got {}",
                self.height
            )));
        }
        if self.seeds.is_empty() {
            return Err(CliError::usage("seeds must not be empty"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(CliError::usage("seeds must be distinct"));
        }
        if let Some(f) = self.splits {
            f.validate()?;
        }
        self.optim.validate()?;
        if let Some(entry) = registry::lookup(&self.dataset) {
            if self.task.is_some_and(|t| t != entry.task) {
                return Err(CliError::usage(format!(
                    "{} is a {} dataset",
                    entry.name, entry.task
                )));
            }
            if self.format.is_some_and(|f| f != Format::Csv)
                || self.target.is_some()
                || !self.categorical.is_empty()
            {
                return Err(CliError::usage(format!(
                    "{} is a registry dataset; format, target and categorical are fixed",
                    entry.name
                )));
            }
        } else if self.task.is_none() {
            return Err(CliError::usage(
                "task is required for datasets outside the registry",
            ));
        }
        Ok(())
    }

    /// Hash of everything except the seed list, so every seed's artifacts
    /// from one configuration share a hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.seeds.clear();
        config_hash(&c)
    }

    pub fn task(&self) -> Task {
        registry::lookup(&self.dataset).map_or_else(|| self.task.expect("validated"), |e| e.task)
    }

    pub fn fractions(&self) -> Fractions {
        self.splits.unwrap_or_else(|| {
            registry::lookup(&self.dataset).map_or(Fractions::CLASSIFICATION, |e| e.fractions)
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            height: self.height,
            optim: self.optim.clone(),
            fractions: self.fractions(),
        }
    }

    pub fn load_dataset(&self) -> CliResult<Dataset> {
        if let Some(entry) = registry::lookup(&self.dataset) {
            return Ok(entry.load()?);
        }
        let path = PathBuf::from(&self.dataset);
        if !path.is_file() {
            return Err(CliError::failure(format!(
                "dataset {} is neither a registry name nor a readable file",
                self.dataset
            )));
        }
        let format = self.format.unwrap_or_else(|| guess_format(&path));
        let schema = Schema {
            task: self.task(),
            target: self.target.clone(),
            categorical: self.categorical.clone(),
        };
        Ok(Dataset::load(&path, format, &schema)?)
    }
}

fn guess_format(path: &Path) -> Format {
    match path.extension().and_then(|e| e.to_str()) {
        Some("libsvm" | "svm") => Format::Libsvm,
        _ => Format::Csv,
    }
}

/// Parses `1,2,3` or `0..10` (half-open).
pub fn parse_seeds(text: &str) -> CliResult<Vec<u64>> {
    let bad = || CliError::usage(format!("cannot parse seed list {text:?}"));
    if let Some((a, b)) = text.split_once("..") {
        let (a, b): (u64, u64) = (
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
        );
        if a >= b {
            return Err(bad());
        }
        return Ok((a..b).collect());
    }
    text.split(',')
        .map(|s| s.trim().parse().map_err(|_| bad()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{"dataset":"balance_scale","height":2,"seeds":[1,2],
        "optim":{"epoch":20,"optimizer":"adam","lr":0.8,"mtm":null,"scheduler_type":"linear",
        "scheduler_decay":0.98,"batch_size":128,"lambda":null,"grad_clip":null,"overparams":null}}"#;

    #[test]
    fn registry_config() {
        let c = RunConfig::from_json(BASE).unwrap();
        assert_eq!(c.task(), Task::Classification);
        assert_eq!(c.fractions(), Fractions::CLASSIFICATION);
        let mut other = c.clone();
        other.seeds = vec![9];
        assert_eq!(c.hash(), other.hash());
        other.height = 3;
        assert_ne!(c.hash(), other.hash());
    }

    #[test]
    fn unknown_keys_are_named() {
        let e = RunConfig::from_json(&BASE.replace("\"height\"", "\"hieght\"")).unwrap_err();
        assert_eq!(e.code, crate::error::EXIT_USAGE);
        assert!(e.message.contains("hieght"), "{}", e.message);
        let e = RunConfig::from_json(&BASE.replace("\"mtm\"", "\"momentum\"")).unwrap_err();
        assert!(e.message.contains("momentum"), "{}", e.message);
    }

    #[test]
    fn registry_task_conflict() {
        let e =
            RunConfig::from_json(&BASE.replace("\"height\"", "\"task\":\"regression\",\"height\""))
                .unwrap_err();
        assert_eq!(e.code, crate::error::EXIT_USAGE);
        let e = RunConfig::from_json(&BASE.replace("balance_scale", "mine.csv")).unwrap_err();
        assert!(e.message.contains("task"));
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("1,2, 3").unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_seeds("0..4").unwrap(), vec![0, 1, 2, 3]);
        assert!(parse_seeds("a").is_err());
        assert!(parse_seeds("3..3").is_err());
    }
}
