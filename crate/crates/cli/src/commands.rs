//! Subcommand implementations. Each returns the value it reports so tests can
//! inspect it without going through a process.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use dtsemnet::checkpoint::Checkpoint;
use dtsemnet::data::{prepare, Dataset, Standardizer, Target};
use dtsemnet::equiv::{run_equiv, EquivReport};
use dtsemnet::gradcheck::{run_gradcheck, GradcheckOptions, GradcheckReport, DEFAULT_TOLERANCE};
use dtsemnet::interchange::{FeatureSpace, TreeDocument, TreeModel};
use dtsemnet::semnet::{SemNet, Task};
use dtsemnet::train::{evaluate, metric_name, run_seeds, AggregateResult, RunResult};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult, EXIT_MISSING_STANDARDIZER};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TREE_FILE: &str = "tree.json";
pub const RUN_LOG_FILE: &str = "run.jsonl";
pub const STANDARDIZER_FILE: &str = "standardizer.json";
pub const AGGREGATE_FILE: &str = "aggregate.json";

/// Standardizer as written next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StandardizerDump {
    pub config_hash: String,
    pub seed: u64,
    pub standardizer: Standardizer,
}

pub fn seed_dir(out_dir: &Path, seed: u64) -> PathBuf {
    out_dir.join(format!("seed-{seed}"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::failure(e.to_string()))?;
    fs::write(path, text + "\n")
        .map_err(|e| CliError::failure(format!("cannot write {}: {e}", path.display())))
}

fn class_names(data: &Dataset) -> Option<Vec<String>> {
    match &data.target {
        Target::Classes { names, .. } => Some(names.clone()),
        Target::Values { .. } => None,
    }
}

/// The decoded tree of `net` in standardized feature units.
pub fn tree_document(net: &SemNet) -> CliResult<TreeDocument> {
    let (tree, params, regressors) = net.decode();
    let model = TreeModel {
        tree,
        params,
        regressors,
        task: net.task(),
    };
    let mut doc = TreeDocument::from_model(&model)?;
    doc.feature_space = Some(FeatureSpace::Standardized);
    Ok(doc)
}

fn write_run(
    dir: &Path,
    cfg: &RunConfig,
    hash: &str,
    run: &RunResult,
    names: Option<&Vec<String>>,
) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    let mut ck = Checkpoint::from_net(&run.net, hash, run.seed);
    ck.class_names = names.cloned();
    write_json(&dir.join(CHECKPOINT_FILE), &ck)?;

    let mut doc = tree_document(&run.net)?;
    doc.class_names = names.cloned();
    doc.config_hash = Some(hash.to_string());
    doc.seed = Some(run.seed);
    write_json(&dir.join(TREE_FILE), &doc)?;

    let dump = StandardizerDump {
        config_hash: hash.to_string(),
        seed: run.seed,
        standardizer: run.standardizer.clone(),
    };
    write_json(&dir.join(STANDARDIZER_FILE), &dump)?;

    let mut log = String::new();
    let mut line = |v: serde_json::Value| {
        log += &v.to_string();
        log.push('\n');
    };
    line(json!({ "config_hash": hash, "seed": run.seed, "config": cfg }));
    for e in &run.epochs {
        line(serde_json::to_value(e).expect("epoch log serializes"));
    }
    line(json!({
        "best_epoch": run.best_epoch,
        "val_metric": run.val_metric,
        "test_metric": run.test_metric,
        "seconds": run.seconds,
    }));
    fs::write(dir.join(RUN_LOG_FILE), log)?;
    Ok(())
}

/// Trains every seed of `cfg` and writes per-seed artifacts plus
/// `aggregate.json` under `out_dir`. Seeds that fail are recorded in the
/// aggregate, which is then marked partial.
pub fn train(cfg: &RunConfig, out_dir: &Path) -> CliResult<AggregateResult> {
    let data = cfg.load_dataset()?;
    let hash = cfg.hash();
    let names = class_names(&data);
    let runs = run_seeds(&data, &cfg.train_config(), &cfg.seeds);
    fs::create_dir_all(out_dir)?;
    for (seed, run) in &runs {
        let dir = seed_dir(out_dir, *seed);
        match run {
            Ok(run) => write_run(&dir, cfg, &hash, run, names.as_ref())?,
            Err(e) => {
                fs::create_dir_all(&dir)?;
                let record = json!({ "config_hash": hash, "seed": seed, "config": cfg });
                let failure = json!({ "error": e.to_string() });
                fs::write(dir.join(RUN_LOG_FILE), format!("{record}\n{failure}\n"))?;
            }
        }
    }
    let aggregate = AggregateResult::from_runs(&hash, cfg.task(), cfg.height, &runs);
    write_json(&out_dir.join(AGGREGATE_FILE), &aggregate)?;
    Ok(aggregate)
}

/// Describes the failed seeds of a partial aggregate.
pub fn failed_seeds(aggregate: &AggregateResult) -> Option<String> {
    let failed: Vec<String> = aggregate
        .per_seed
        .iter()
        .filter_map(|m| m.error.as_ref().map(|e| format!("seed {}: {e}", m.seed)))
        .collect();
    (!failed.is_empty()).then(|| {
        format!(
            "{} of {} seeds failed; {}",
            failed.len(),
            aggregate.per_seed.len(),
            failed.join("; ")
        )
    })
}

pub fn load_checkpoint(path: &Path) -> CliResult<(Checkpoint, SemNet)> {
    let text = fs::read_to_string(path).map_err(|e| {
        CliError::failure(format!("cannot read checkpoint {}: {e}", path.display()))
    })?;
    let ck = Checkpoint::from_json(&text)?;
    let net = ck.to_net()?;
    Ok((ck, net))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub seed: u64,
    pub split: SplitName,
    pub rows: usize,
    pub metric: &'static str,
    pub value: f64,
}

/// Scores a checkpoint on one split of the data it was trained on. The split
/// and standardizer are rebuilt from the config and the checkpoint's seed.
pub fn eval(checkpoint: &Path, cfg: &RunConfig, split: SplitName) -> CliResult<EvalReport> {
    let (ck, net) = load_checkpoint(checkpoint)?;
    let hash = cfg.hash();
    if ck.config_hash != hash {
        return Err(CliError::usage(format!(
            "checkpoint was trained with config {}, this config hashes to {hash}",
            ck.config_hash
        )));
    }
    let data = cfg.load_dataset()?;
    let prepared = prepare(&data, data.split(cfg.fractions(), ck.seed)?)?;
    let part = match split {
        SplitName::Train => &prepared.train,
        SplitName::Val => &prepared.val,
        SplitName::Test => &prepared.test,
    };
    let (tree, params, regs) = net.decode();
    let value = evaluate(
        &tree,
        &params,
        regs.as_ref(),
        part,
        Some(&prepared.standardizer),
    )?;
    Ok(EvalReport {
        config_hash: hash,
        seed: ck.seed,
        split,
        rows: part.len(),
        metric: metric_name(net.task()),
        value,
    })
}

/// The checkpoint's tree in interchange form, optionally rewritten for raw
/// feature units using the standardizer dump at `standardizer`.
pub fn export(
    checkpoint: &Path,
    destandardize: bool,
    standardizer: Option<&Path>,
) -> CliResult<TreeDocument> {
    let (ck, net) = load_checkpoint(checkpoint)?;
    let mut doc = tree_document(&net)?;
    doc.class_names = ck.class_names.clone();
    doc.config_hash = Some(ck.config_hash.clone());
    doc.seed = Some(ck.seed);
    if !destandardize {
        return Ok(doc);
    }
    let path = standardizer.map_or_else(
        || {
            checkpoint
                .parent()
                .unwrap_or(Path::new("."))
                .join(STANDARDIZER_FILE)
        },
        Path::to_path_buf,
    );
    let text = fs::read_to_string(&path).map_err(|e| {
        CliError::new(
            EXIT_MISSING_STANDARDIZER,
            format!("cannot read standardizer {}: {e}", path.display()),
        )
    })?;
    let dump: StandardizerDump = serde_json::from_str(&text).map_err(|e| {
        CliError::new(
            EXIT_MISSING_STANDARDIZER,
            format!("invalid standardizer {}: {e}", path.display()),
        )
    })?;
    if (dump.config_hash.as_str(), dump.seed) != (ck.config_hash.as_str(), ck.seed) {
        return Err(CliError::usage(format!(
            "standardizer belongs to config {} seed {}, checkpoint to config {} seed {}",
            dump.config_hash, dump.seed, ck.config_hash, ck.seed
        )));
    }
    Ok(doc.destandardize(&dump.standardizer)?)
}

/// Samples the standardized box plus boundary points and compares the
/// checkpoint's network with a tree: its own decoding, or the tree file at
/// `tree` (leaves matched by position).
pub fn equiv_check(
    checkpoint: &Path,
    tree: Option<&Path>,
    samples: usize,
    per_node: usize,
    seed: u64,
) -> CliResult<EquivReport> {
    let (_, net) = load_checkpoint(checkpoint)?;
    let (tree, params) = match tree {
        None => {
            let (t, p, _) = net.decode();
            (t, p)
        }
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                CliError::failure(format!("cannot read tree {}: {e}", path.display()))
            })?;
            let doc: TreeDocument = serde_json::from_str(&text)
                .map_err(|e| CliError::usage(format!("invalid tree file: {e}")))?;
            if doc.feature_space == Some(FeatureSpace::Raw) {
                return Err(CliError::usage(
                    "tree file is in raw feature units; export it without --destandardize",
                ));
            }
            let model = doc.to_model()?;
            if model.tree.num_leaves() != net.num_leaves() || model.params.dim() != net.dim() {
                return Err(CliError::usage(
                    "tree file and checkpoint have different shapes",
                ));
            }
            (model.tree, model.params)
        }
    };
    Ok(run_equiv(&net, &tree, &params, samples, per_node, seed)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum GradcheckTask {
    Classification,
    Regression,
    Both,
}

pub fn gradcheck(task: GradcheckTask, trials: usize, seed: u64) -> CliResult<Vec<GradcheckReport>> {
    if trials == 0 {
        return Err(CliError::usage("--trials must be at least 1"));
    }
    let tasks: &[Task] = match task {
        GradcheckTask::Classification => &[Task::Classification],
        GradcheckTask::Regression => &[Task::Regression],
        GradcheckTask::Both => &[Task::Classification, Task::Regression],
    };
    tasks
        .iter()
        .map(|&t| Ok(run_gradcheck(&GradcheckOptions::new(t, trials, seed))?))
        .collect()
}

pub fn gradcheck_passed(reports: &[GradcheckReport]) -> bool {
    reports.iter().all(|r| r.passed(DEFAULT_TOLERANCE))
}

/// Writes pretty JSON to `out`, or to standard output when `out` is `None`.
pub fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> CliResult<()> {
    match out {
        Some(path) => write_json(path, value),
        None => {
            let text = serde_json::to_string_pretty(value)
                .map_err(|e| CliError::failure(e.to_string()))?;
            writeln!(std::io::stdout(), "{text}")?;
            Ok(())
        }
    }
}
