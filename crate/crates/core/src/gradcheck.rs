//! Central finite-difference comparison against the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::backprop::{backward_classification, backward_regression, loss_cross_entropy};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::semnet::{SemNet, Task};
use crate::tree::{build_balanced, graft_classifier};

pub const DEFAULT_STEP: f64 = 1e-6;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Denominator floor for the relative error, so gradients that are zero up to
/// rounding are compared absolutely.
pub const REL_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct GradcheckOptions {
    pub task: Task,
    pub trials: usize,
    pub seed: u64,
    pub step: f64,
    pub batch: usize,
}

impl GradcheckOptions {
    pub fn new(task: Task, trials: usize, seed: u64) -> Self {
        Self {
            task,
            trials,
            seed,
            step: DEFAULT_STEP,
            batch: 8,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub task: Task,
    pub trials: usize,
    pub parameters_checked: usize,
    pub max_relative_error: f64,
    /// `(trial, parameter)` of the worst entry.
    pub worst: Option<(usize, String)>,
    /// Decision-layer gradients under the straight-through estimator are not
    /// derivatives of the loss, so regression runs skip them.
    pub ste_paths: Option<&'static str>,
}

impl GradcheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Mean loss of the batch, computed from forward passes only.
pub fn batch_loss(net: &SemNet, xs: &[Vec<f64>], targets: &Targets) -> Result<f64> {
    let mut total = 0.0;
    for (r, x) in xs.iter().enumerate() {
        let rec = net.forward(x)?;
        total += match targets {
            Targets::Classes(y) => {
                loss_cross_entropy(rec.classes.as_ref().expect("classification head"), y[r])
            }
            Targets::Values(y) => {
                let out = &rec.regression.as_ref().expect("regression head").out;
                out.iter()
                    .zip(&y[r])
                    .map(|(o, t)| (o - t) * (o - t))
                    .sum::<f64>()
                    / out.len() as f64
            }
        };
    }
    Ok(total / xs.len() as f64)
}

pub enum Targets {
    Classes(Vec<usize>),
    Values(Vec<Vec<f64>>),
}

/// A random network with a random batch: height 1–4, 1–6 features, 2–4
/// classes (capped by the leaf count) or 1–2 regression outputs.
pub fn random_problem(
    task: Task,
    rng: &mut ChaCha8Rng,
    batch: usize,
) -> Result<(SemNet, Vec<Vec<f64>>, Targets)> {
    let height = rng.gen_range(1..=4usize);
    let dim = rng.gen_range(1..=6usize);
    let mut net = match task {
        Task::Classification => {
            let classes = rng.gen_range(2..=4usize).min(1 << height);
            SemNet::encode(graft_classifier(height, classes)?, dim, task, 0, rng)?
        }
        Task::Regression => {
            let outputs = rng.gen_range(1..=2usize);
            SemNet::encode(build_balanced(height)?, dim, task, outputs, rng)?
        }
    };
    for i in 0..net.num_internal() {
        net.raw_decisions_mut()[(i, dim)] = rng.gen_range(-0.5..0.5);
    }
    if let Some(regs) = net.regressors_mut() {
        for b in &mut regs.blocks {
            for j in 0..b.rows() {
                b[(j, dim)] = rng.gen_range(-1.0..1.0);
            }
        }
    }
    let xs: Vec<Vec<f64>> = (0..batch)
        .map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let targets = match task {
        Task::Classification => {
            let c = net.num_classes().unwrap();
            Targets::Classes((0..batch).map(|_| rng.gen_range(0..c)).collect())
        }
        Task::Regression => {
            let d = net.outputs();
            Targets::Values(
                (0..batch)
                    .map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect())
                    .collect(),
            )
        }
    };
    Ok((net, xs, targets))
}

fn central_difference(
    net: &mut SemNet,
    xs: &[Vec<f64>],
    targets: &Targets,
    h: f64,
    entry: &mut dyn FnMut(&mut SemNet) -> &mut f64,
) -> Result<f64> {
    let orig = *entry(net);
    *entry(net) = orig + h;
    let up = batch_loss(net, xs, targets)?;
    *entry(net) = orig - h;
    let down = batch_loss(net, xs, targets)?;
    *entry(net) = orig;
    Ok((up - down) / (2.0 * h))
}

/// Checks one network; returns the worst relative error with its label and
/// the number of parameters compared.
pub fn check_network(
    net: &mut SemNet,
    xs: &[Vec<f64>],
    targets: &Targets,
    h: f64,
) -> Result<(f64, String, usize)> {
    let mut worst = (0.0, String::new());
    let mut count = 0;
    let mut record = |err: f64, label: String| {
        if err > worst.0 || worst.1.is_empty() {
            worst = (err, label);
        }
    };
    match targets {
        Targets::Classes(y) => {
            let (_, g) = backward_classification(net, xs, y)?;
            let (k, c) = g.decisions.shape();
            for i in 0..k {
                for j in 0..c {
                    let num = central_difference(net, xs, targets, h, &mut |n| {
                        &mut n.raw_decisions_mut()[(i, j)]
                    })?;
                    record(
                        relative_error(g.decisions[(i, j)], num),
                        format!("decision[{i}][{j}]"),
                    );
                    count += 1;
                }
            }
        }
        Targets::Values(y) => {
            let (_, g) = backward_regression(net, xs, y)?;
            for (d, block) in g.regressors.iter().enumerate() {
                let (rows, cols) = block.shape();
                for j in 0..rows {
                    for c in 0..cols {
                        let num = central_difference(net, xs, targets, h, &mut |n| {
                            &mut n.regressors_mut().expect("regression head").blocks[d][(j, c)]
                        })?;
                        record(
                            relative_error(block[(j, c)], num),
                            format!("regressor[{d}][{j}][{c}]"),
                        );
                        count += 1;
                    }
                }
            }
        }
    }
    Ok((worst.0, worst.1, count))
}

pub fn run_gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    if opts.trials == 0 {
        return Err(Error::invalid("gradcheck needs at least one trial"));
    }
    if !(opts.step > 0.0) || opts.batch == 0 {
        return Err(Error::invalid("step and batch must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradcheckReport {
        task: opts.task,
        trials: opts.trials,
        parameters_checked: 0,
        max_relative_error: 0.0,
        worst: None,
        ste_paths: (opts.task == Task::Regression).then_some("by-definition"),
    };
    for trial in 0..opts.trials {
        let (mut net, xs, targets) = random_problem(opts.task, &mut rng, opts.batch)?;
        let (err, label, count) = check_network(&mut net, &xs, &targets, opts.step)?;
        report.parameters_checked += count;
        if report.worst.is_none() || err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst = Some((trial, label));
        }
    }
    Ok(report)
}

/// Finite-difference gradient of `f` with respect to every entry of `m`.
pub fn numeric_matrix_gradient(m: &Matrix, h: f64, f: &mut dyn FnMut(&Matrix) -> f64) -> Matrix {
    let mut probe = m.clone();
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for idx in 0..m.as_slice().len() {
        let orig = probe.as_slice()[idx];
        probe.as_mut_slice()[idx] = orig + h;
        let up = f(&probe);
        probe.as_mut_slice()[idx] = orig - h;
        let down = f(&probe);
        probe.as_mut_slice()[idx] = orig;
        out.as_mut_slice()[idx] = (up - down) / (2.0 * h);
    }
    out
}
