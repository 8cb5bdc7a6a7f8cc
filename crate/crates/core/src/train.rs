//! Mini-batch training with validation-based model selection.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backprop::{add_l1, backward_classification, backward_regression, LossReport};
use crate::data::{prepare, Dataset, Fractions, Prepared, Standardizer};
use crate::error::{Error, Result};
use crate::optim::{clip_grads, make_overparam_chain, OptimConfig, OptimState};
use crate::semnet::{SemNet, Task};
use crate::tree::{
    build_balanced, graft_classifier, DecisionParams, LeafRegressors, Prediction, TreeStructure,
};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub height: usize,
    pub optim: OptimConfig,
    pub fractions: Fractions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_metric: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub seed: u64,
    pub task: Task,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub val_metric: f64,
    /// Accuracy in percent, or RMSE in original target units.
    pub test_metric: f64,
    pub seconds: f64,
    /// The selected network.
    pub net: SemNet,
    pub standardizer: Standardizer,
}

/// Accuracy (percent) or RMSE of a decoded tree. For regression, `standardizer`
/// maps predictions and targets back to original units first.
pub fn evaluate(
    tree: &TreeStructure,
    params: &DecisionParams,
    regressors: Option<&LeafRegressors>,
    data: &Dataset,
    standardizer: Option<&Standardizer>,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty split"));
    }
    let rows = data.features.iter_rows();
    if let Some(labels) = data.labels() {
        let mut correct = 0usize;
        for (x, &y) in rows.zip(labels) {
            match tree.predict(params, regressors, x)? {
                Prediction::Class(c) if c == y => correct += 1,
                Prediction::Class(_) => {}
                Prediction::Values(_) => {
                    return Err(Error::InvalidState(
                        "regression tree on class labels".into(),
                    ))
                }
            }
        }
        return Ok(100.0 * correct as f64 / data.len() as f64);
    }
    let values = data.values().expect("regression targets");
    let mut sq = 0.0;
    for (x, y) in rows.zip(values.iter_rows()) {
        let Prediction::Values(p) = tree.predict(params, regressors, x)? else {
            return Err(Error::InvalidState(
                "classification tree on real targets".into(),
            ));
        };
        let (p, y) = match standardizer {
            Some(s) => (s.inverse_target(&p), s.inverse_target(y)),
            None => (p, y.to_vec()),
        };
        sq += p
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / y.len() as f64;
    }
    Ok((sq / data.len() as f64).sqrt())
}

fn evaluate_net(net: &SemNet, data: &Dataset, s: &Standardizer) -> Result<f64> {
    let (tree, params, regs) = net.decode();
    evaluate(&tree, &params, regs.as_ref(), data, Some(s))
}

fn improves(task: Task, candidate: f64, best: f64) -> bool {
    match task {
        Task::Classification => candidate > best,
        Task::Regression => candidate < best,
    }
}

/// The initial network for a dataset: grafted class subtrees for
/// classification, a balanced tree otherwise; with a factor chain when
/// `overparams` is non-empty.
pub fn initial_net(
    data: &Dataset,
    height: usize,
    optim: &OptimConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SemNet> {
    let tree = match data.num_classes() {
        Some(c) => graft_classifier(height, c)?,
        None => build_balanced(height)?,
    };
    let mut net = SemNet::encode(tree, data.dim(), data.task(), data.outputs(), rng)?;
    if !optim.widths().is_empty() {
        let chain = make_overparam_chain(net.num_internal(), net.dim(), optim.widths(), rng)?;
        net.attach_chain(chain)?;
    }
    Ok(net)
}

/// One optimizer step on `batch`; returns the loss report.
fn train_step(
    net: &mut SemNet,
    state: &mut OptimState,
    cfg: &OptimConfig,
    data: &Dataset,
    batch: &[usize],
) -> Result<LossReport> {
    let xs: Vec<&[f64]> = batch.iter().map(|&r| data.features.row(r)).collect();
    let (mut report, mut grads) = match data.labels() {
        Some(labels) => {
            let ys: Vec<usize> = batch.iter().map(|&r| labels[r]).collect();
            backward_classification(net, &xs, &ys)?
        }
        None => {
            let values = data.values().expect("regression targets");
            let ys: Vec<&[f64]> = batch.iter().map(|&r| values.row(r)).collect();
            backward_regression(net, &xs, &ys)?
        }
    };
    add_l1(&mut report, &mut grads, &net.decisions(), cfg.lambda())?;
    grads.project_to_chain(net)?;
    if let Some(max) = cfg.grad_clip {
        clip_grads(&mut grads.tensors_mut(), max);
    }
    state.step(&mut net.trainable_mut(), &grads.tensors())?;
    Ok(report)
}

/// Trains on `prepared.train`, selects the epoch with the best validation
/// metric (earliest on ties), and scores that network once on the test split.
/// Without validation rows the training split is used for selection.
pub fn fit(
    prepared: &Prepared,
    height: usize,
    optim: &OptimConfig,
    seed: u64,
) -> Result<RunResult> {
    optim.validate()?;
    let start = Instant::now();
    let train = &prepared.train;
    if train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let select_on = if prepared.val.is_empty() {
        train
    } else {
        &prepared.val
    };
    let s = &prepared.standardizer;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = initial_net(train, height, optim, &mut rng)?;
    let mut state = OptimState::new(optim, &net.trainable_shapes());
    let task = net.task();

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::with_capacity(optim.epochs);
    let mut best: Option<(usize, f64, SemNet)> = None;
    for epoch in 0..optim.epochs {
        let lr = state.decay_lr(optim, epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(optim.batch_size).enumerate() {
            let report =
                train_step(&mut net, &mut state, optim, train, batch).map_err(|e| match e {
                    Error::NumericFailure(m) => {
                        Error::NumericFailure(format!("epoch {epoch}, batch {b}: {m}"))
                    }
                    other => other,
                })?;
            if !report.loss.is_finite() {
                return Err(Error::NumericFailure(format!(
                    "epoch {epoch}, batch {b}: loss is {}",
                    report.loss
                )));
            }
            loss_sum += report.loss * batch.len() as f64;
        }
        let val_metric = evaluate_net(&net, select_on, s)?;
        epochs.push(EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / train.len() as f64,
            val_metric,
        });
        if best
            .as_ref()
            .is_none_or(|(_, m, _)| improves(task, val_metric, *m))
        {
            best = Some((epoch, val_metric, net.clone()));
        }
    }
    let (best_epoch, val_metric, net) = best.expect("at least one epoch");
    let test_metric = if prepared.test.is_empty() {
        f64::NAN
    } else {
        evaluate_net(&net, &prepared.test, s)?
    };
    Ok(RunResult {
        seed,
        task,
        epochs,
        best_epoch,
        val_metric,
        test_metric,
        seconds: start.elapsed().as_secs_f64(),
        net,
        standardizer: s.clone(),
    })
}

/// Splits with `seed`, standardizes, and fits.
pub fn fit_dataset(data: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<RunResult> {
    let split = data.split(cfg.fractions, seed)?;
    let prepared = prepare(data, split)?;
    fit(&prepared, cfg.height, &cfg.optim, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetric {
    pub seed: u64,
    pub metric: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Summary over seeds. Contains no timing so identical runs serialize to
/// identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub config_hash: String,
    pub task: Task,
    pub metric: String,
    pub height: usize,
    pub mean: f64,
    pub std: f64,
    pub summary: String,
    pub partial: bool,
    pub per_seed: Vec<SeedMetric>,
}

pub fn metric_name(task: Task) -> &'static str {
    match task {
        Task::Classification => "accuracy_percent",
        Task::Regression => "rmse",
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn format_mean_std(task: Task, mean: f64, std: f64) -> String {
    match task {
        Task::Classification => format!("{mean:.1} ± {std:.1}"),
        Task::Regression => format!("{mean:.3} ± {std:.3}"),
    }
}

impl AggregateResult {
    pub fn from_runs(
        config_hash: &str,
        task: Task,
        height: usize,
        runs: &[(u64, Result<RunResult>)],
    ) -> Self {
        let per_seed: Vec<SeedMetric> = runs
            .iter()
            .map(|(seed, r)| match r {
                Ok(r) => SeedMetric {
                    seed: *seed,
                    metric: Some(r.test_metric),
                    error: None,
                },
                Err(e) => SeedMetric {
                    seed: *seed,
                    metric: None,
                    error: Some(e.to_string()),
                },
            })
            .collect();
        let ok: Vec<f64> = per_seed.iter().filter_map(|m| m.metric).collect();
        let (mean, std) = mean_std(&ok);
        Self {
            config_hash: config_hash.to_string(),
            task,
            metric: metric_name(task).to_string(),
            height,
            mean,
            std,
            summary: format_mean_std(task, mean, std),
            partial: ok.len() != runs.len(),
            per_seed,
        }
    }
}

/// Fits every seed in parallel. Results come back in `seeds` order.
pub fn run_seeds(
    data: &Dataset,
    cfg: &TrainConfig,
    seeds: &[u64],
) -> Vec<(u64, Result<RunResult>)> {
    seeds
        .par_iter()
        .map(|&seed| (seed, fit_dataset(data, cfg, seed)))
        .collect()
}

/// SHA-256 of a value's JSON serialization.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let text = serde_json::to_string(value).expect("config serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}
