//! Reverse-mode gradients through the fixed network.
//!
//! Rows are processed in parallel in fixed-size chunks and the chunk sums are
//! reduced in order, so results do not depend on the thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::optim::chain_gradients;
use crate::semnet::{ForwardRecord, SemNet, Task};

const CHUNK: usize = 16;

/// Gradients mirroring the trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// Gradient of the effective `K × (n+1)` decision matrix; the last column
    /// holds the bias gradients.
    pub decisions: Matrix,
    /// Per-factor gradients, filled by [`Gradients::project_to_chain`].
    pub chain: Option<Vec<Matrix>>,
    /// One `Λ × (n+1)` block per regression output.
    pub regressors: Vec<Matrix>,
}

impl Gradients {
    pub fn zeros(net: &SemNet) -> Self {
        Self {
            decisions: Matrix::zeros(net.num_internal(), net.dim() + 1),
            chain: None,
            regressors: (0..net.outputs())
                .map(|_| Matrix::zeros(net.num_leaves(), net.dim() + 1))
                .collect(),
        }
    }

    /// `K × n` weight gradients.
    pub fn d_weights(&self) -> Matrix {
        let (k, c) = self.decisions.shape();
        let rows: Vec<Vec<f64>> = (0..k)
            .map(|i| self.decisions.row(i)[..c - 1].to_vec())
            .collect();
        Matrix::from_rows(&rows).unwrap_or_else(|_| Matrix::zeros(k, c - 1))
    }

    pub fn d_biases(&self) -> Vec<f64> {
        let c = self.decisions.cols();
        self.decisions.iter_rows().map(|r| r[c - 1]).collect()
    }

    /// Pushes the decision gradient back through the net's factor chain, if any.
    pub fn project_to_chain(&mut self, net: &SemNet) -> Result<()> {
        self.chain = match net.chain() {
            Some(chain) => Some(chain_gradients(chain, &self.decisions)?),
            None => None,
        };
        Ok(())
    }

    /// Tensors aligned with [`SemNet::trainable_mut`].
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out: Vec<&Matrix> = match &self.chain {
            Some(c) => c.iter().collect(),
            None => vec![&self.decisions],
        };
        out.extend(self.regressors.iter());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = match &mut self.chain {
            Some(c) => c.iter_mut().collect(),
            None => vec![&mut self.decisions],
        };
        out.extend(self.regressors.iter_mut());
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|m| m.is_finite()) && self.decisions.is_finite()
    }

    fn add(&mut self, other: &Gradients) {
        self.decisions.add_assign(&other.decisions);
        for (a, b) in self.regressors.iter_mut().zip(&other.regressors) {
            a.add_assign(b);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    /// Mean data loss plus the L1 penalty when one was added.
    pub loss: f64,
    pub data_loss: f64,
    pub l1_penalty: Option<f64>,
    pub rows: usize,
    /// Straight-through substitutions made while differentiating; one per
    /// row for regression, always zero for classification.
    pub ste_substitutions: usize,
}

impl LossReport {
    fn data(loss: f64, rows: usize, ste: usize) -> Self {
        Self {
            loss,
            data_loss: loss,
            l1_penalty: None,
            rows,
            ste_substitutions: ste,
        }
    }
}

/// Softmax cross-entropy with max subtraction.
pub fn loss_cross_entropy(scores: &[f64], label: usize) -> f64 {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|c| (c - m).exp()).sum();
    m + z.ln() - scores[label]
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|c| (c - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn check_finite(rec: &ForwardRecord, row: usize) -> Result<()> {
    let finite = rec
        .decisions
        .iter()
        .chain(&rec.leaves)
        .all(|v| v.is_finite());
    if finite {
        Ok(())
    } else {
        Err(Error::NumericFailure(format!(
            "non-finite activation at batch row {row}"
        )))
    }
}

/// Propagates leaf-score gradients through `leaf_mask`, the ReLUs and the
/// decision layer, accumulating `scale · dI ⊗ [x;1]` into `d_dec`.
fn leaves_to_decisions(
    net: &SemNet,
    rec: &ForwardRecord,
    d_leaves: &[f64],
    x: &[f64],
    d_dec: &mut Matrix,
) {
    let mask = net.leaf_mask();
    let mut d_split = vec![0.0; mask.cols()];
    for (row, dl) in mask.iter_rows().zip(d_leaves) {
        if *dl != 0.0 {
            for (ds, m) in d_split.iter_mut().zip(row) {
                *ds += m * dl;
            }
        }
    }
    let k = net.num_internal();
    for i in 0..k {
        let mut di = 0.0;
        for (c, sm) in net.split_mask().iter_rows().enumerate() {
            // ReLU passes gradient only where its output is strictly positive.
            if sm[i] != 0.0 && rec.split[c] > 0.0 {
                di += sm[i] * d_split[c];
            }
        }
        if di != 0.0 {
            let row = d_dec.row_mut(i);
            for (g, xv) in row.iter_mut().zip(x) {
                *g += di * xv;
            }
            row[x.len()] += di;
        }
    }
}

fn check_batch<R: AsRef<[f64]>>(net: &SemNet, xs: &[R], n_targets: usize) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if xs.len() != n_targets {
        return Err(Error::invalid(format!(
            "{} rows but {} targets",
            xs.len(),
            n_targets
        )));
    }
    if let Some(r) = xs.iter().position(|x| x.as_ref().len() != net.dim()) {
        return Err(Error::invalid(format!(
            "batch row {r} has the wrong dimension"
        )));
    }
    Ok(())
}

/// Runs `per_row` over fixed chunks in parallel and reduces in chunk order.
fn reduce_rows<F>(net: &SemNet, rows: usize, per_row: F) -> Result<(f64, Gradients)>
where
    F: Fn(usize, &mut Gradients) -> Result<f64> + Sync,
{
    let starts: Vec<usize> = (0..rows).step_by(CHUNK).collect();
    let parts: Vec<Result<(f64, Gradients)>> = starts
        .par_iter()
        .map(|&s| {
            let mut g = Gradients::zeros(net);
            let mut loss = 0.0;
            for r in s..(s + CHUNK).min(rows) {
                loss += per_row(r, &mut g)?;
            }
            Ok((loss, g))
        })
        .collect();
    let mut total = Gradients::zeros(net);
    let mut loss = 0.0;
    for p in parts {
        let (l, g) = p?;
        loss += l;
        total.add(&g);
    }
    Ok((loss, total))
}

fn finish(mut loss: f64, mut grads: Gradients, scale: f64) -> Result<(f64, Gradients)> {
    loss *= scale;
    for t in grads.tensors_mut() {
        t.scale(scale);
    }
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::NumericFailure("non-finite loss or gradient".into()));
    }
    Ok((loss, grads))
}

/// Mean cross-entropy over the batch and its exact gradient.
pub fn backward_classification<R>(
    net: &SemNet,
    xs: &[R],
    labels: &[usize],
) -> Result<(LossReport, Gradients)>
where
    R: AsRef<[f64]> + Sync,
{
    let num_classes = net
        .num_classes()
        .ok_or_else(|| Error::InvalidState("network has no classification head".into()))?;
    check_batch(net, xs, labels.len())?;
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {num_classes} classes"
        )));
    }
    let decisions = net.decisions();
    let class_map = net.class_map().expect("classification head");

    let (loss, grads) = reduce_rows(net, xs.len(), |r, g| {
        let x = xs[r].as_ref();
        let rec = net.forward_with(&decisions, x);
        check_finite(&rec, r)?;
        let scores = rec.classes.as_ref().expect("classification head");
        let mut d_scores = softmax(scores);
        d_scores[labels[r]] -= 1.0;

        let mut d_leaves = vec![0.0; rec.leaves.len()];
        for (c, members) in class_map.iter_rows().enumerate() {
            // Max-pool routes to the first leaf attaining the class maximum.
            let winner = (0..members.len())
                .find(|&j| members[j] != 0.0 && rec.leaves[j] == scores[c])
                .expect("class has a leaf");
            d_leaves[winner] += d_scores[c];
        }
        leaves_to_decisions(net, &rec, &d_leaves, x, &mut g.decisions);
        Ok(loss_cross_entropy(scores, labels[r]))
    })?;
    let (loss, grads) = finish(loss, grads, 1.0 / xs.len() as f64)?;
    Ok((LossReport::data(loss, xs.len(), 0), grads))
}

/// Mean squared error over rows and outputs. Regressor gradients are exact;
/// the decision path treats the one-hot selection as identity.
pub fn backward_regression<R, T>(
    net: &SemNet,
    xs: &[R],
    targets: &[T],
) -> Result<(LossReport, Gradients)>
where
    R: AsRef<[f64]> + Sync,
    T: AsRef<[f64]> + Sync,
{
    if net.task() != Task::Regression {
        return Err(Error::InvalidState("network has no regression head".into()));
    }
    check_batch(net, xs, targets.len())?;
    let outputs = net.outputs();
    if let Some(r) = targets.iter().position(|t| t.as_ref().len() != outputs) {
        return Err(Error::invalid(format!(
            "target {r} has the wrong number of outputs"
        )));
    }
    let decisions = net.decisions();

    let (loss, grads) = reduce_rows(net, xs.len(), |r, g| {
        let x = xs[r].as_ref();
        let y = targets[r].as_ref();
        let rec = net.forward_with(&decisions, x);
        check_finite(&rec, r)?;
        let reg = rec.regression.as_ref().expect("regression head");
        let sel = rec.selected_leaf;
        let mut loss = 0.0;
        let mut d_leaves = vec![0.0; rec.leaves.len()];
        for d in 0..outputs {
            let err = reg.out[d] - y[d];
            loss += err * err;
            // Gradient of err² before the 1/(rows·outputs) mean scaling.
            let d_out = 2.0 * err;
            let row = g.regressors[d].row_mut(sel);
            for (gv, xv) in row.iter_mut().zip(x) {
                *gv += d_out * xv;
            }
            row[x.len()] += d_out;
            for (dl, rj) in d_leaves.iter_mut().zip(&reg.values[d]) {
                *dl += d_out * rj;
            }
        }
        leaves_to_decisions(net, &rec, &d_leaves, x, &mut g.decisions);
        Ok(loss)
    })?;
    let (loss, grads) = finish(loss, grads, 1.0 / (xs.len() * outputs) as f64)?;
    Ok((LossReport::data(loss, xs.len(), xs.len()), grads))
}

/// Adds `λ·sign(w)` to the decision-weight gradients (not biases, not
/// regressors) and the penalty `λ·Σ|w|` to the report.
pub fn add_l1(
    report: &mut LossReport,
    grads: &mut Gradients,
    decisions: &Matrix,
    lambda: f64,
) -> Result<()> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }
    if grads.decisions.shape() != decisions.shape() {
        return Err(Error::invalid("gradient and decision shapes differ"));
    }
    if lambda == 0.0 {
        return Ok(());
    }
    let n = decisions.cols() - 1;
    let mut abs_sum = 0.0;
    for i in 0..decisions.rows() {
        let w = &decisions.row(i)[..n];
        let g = &mut grads.decisions.row_mut(i)[..n];
        for (g, w) in g.iter_mut().zip(w) {
            abs_sum += w.abs();
            if *w > 0.0 {
                *g += lambda;
            } else if *w < 0.0 {
                *g -= lambda;
            }
        }
    }
    let penalty = lambda * abs_sum;
    report.l1_penalty = Some(penalty);
    report.loss = report.data_loss + penalty;
    Ok(())
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tree::{build_balanced, graft_classifier, DecisionParams, LeafRegressors};

    #[test]
    fn cross_entropy_values() {
        assert_abs_diff_eq!(loss_cross_entropy(&[0.0; 3], 1), 3f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(
            loss_cross_entropy(&[10.0, 0.0], 0),
            (-10f64).exp().ln_1p(),
            epsilon = 1e-15
        );
        assert!((loss_cross_entropy(&[10.0, 0.0], 0) - 4.54e-5).abs() < 1e-7);
        let mut prev = f64::INFINITY;
        for m in [1.0, 2.0, 5.0, 10.0, 20.0, 40.0] {
            let l = loss_cross_entropy(&[m, 0.0], 0);
            assert!(l < prev && l >= 0.0);
            prev = l;
        }
        assert!(loss_cross_entropy(&[1e6, 0.0], 1).is_finite());
    }

    #[test]
    fn zero_params_have_zero_bias_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = SemNet::encode(
            graft_classifier(2, 3).unwrap(),
            2,
            Task::Classification,
            0,
            &mut rng,
        )
        .unwrap();
        net.raw_decisions_mut().fill(0.0);
        let xs = vec![vec![0.3, -1.0], vec![2.0, 0.5]];
        let (rep, g) = backward_classification(&net, &xs, &[0, 2]).unwrap();
        assert!(rep.loss > 0.0);
        assert!(g.d_biases().iter().all(|&b| b == 0.0));
        assert_eq!(rep.ste_substitutions, 0);
    }

    #[test]
    fn duplicated_rows_same_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = SemNet::encode(
            graft_classifier(3, 2).unwrap(),
            3,
            Task::Classification,
            0,
            &mut rng,
        )
        .unwrap();
        let xs: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let ys = vec![0, 1, 1, 0, 1];
        let (r1, g1) = backward_classification(&net, &xs, &ys).unwrap();
        let xs2: Vec<Vec<f64>> = xs.iter().chain(&xs).cloned().collect();
        let ys2: Vec<usize> = ys.iter().chain(&ys).copied().collect();
        let (r2, g2) = backward_classification(&net, &xs2, &ys2).unwrap();
        assert_abs_diff_eq!(r1.loss, r2.loss, epsilon = 1e-14);
        assert!(g1.decisions.max_abs_diff(&g2.decisions) < 1e-14);
    }

    #[test]
    fn fitted_constant_regression_is_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net =
            SemNet::encode(build_balanced(2).unwrap(), 2, Task::Regression, 1, &mut rng).unwrap();
        let b = &mut net.regressors_mut().unwrap().blocks[0];
        for j in 0..b.rows() {
            b.row_mut(j).copy_from_slice(&[0.0, 0.0, 1.5]);
        }
        let xs: Vec<Vec<f64>> = (0..10)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let ys = vec![vec![1.5]; 10];
        let (rep, g) = backward_regression(&net, &xs, &ys).unwrap();
        assert_eq!(rep.loss, 0.0);
        assert_eq!(rep.ste_substitutions, 10);
        assert!(g
            .tensors()
            .iter()
            .all(|m| m.as_slice().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn height1_decision_gradient_matches_expansion() {
        // Two leaves; I = w·x + b. For I > 0: L = (0, I); for I < 0: L = (−I, 0).
        // dL_j = dout·R_j, so dI = dout·R_1 when I > 0 and −dout·R_0 when I < 0.
        let tree = build_balanced(1).unwrap().with_regressor_payloads();
        let params =
            DecisionParams::new(Matrix::from_rows(&[vec![0.7]]).unwrap(), vec![-0.2]).unwrap();
        let mut regs = LeafRegressors::zeros(2, 1, 1);
        regs.blocks[0] = Matrix::from_rows(&[vec![1.0, 0.5], vec![-2.0, 3.0]]).unwrap();
        let net = SemNet::from_parts(tree, &params, Task::Regression, Some(regs)).unwrap();
        for (x, y) in [(1.0, 0.4), (-1.0, 2.0)] {
            let (_, g) = backward_regression(&net, &[vec![x]], &[vec![y]]).unwrap();
            let i = 0.7 * x - 0.2;
            let (r0, r1) = (1.0 * x + 0.5, -2.0 * x + 3.0);
            let out = if i > 0.0 { r1 } else { r0 };
            let dout = 2.0 * (out - y);
            let di = if i > 0.0 { dout * r1 } else { -dout * r0 };
            assert_abs_diff_eq!(g.decisions[(0, 0)], di * x, epsilon = 1e-12);
            assert_abs_diff_eq!(g.decisions[(0, 1)], di, epsilon = 1e-12);
        }
    }

    #[test]
    fn l1_examples() {
        let mut rep = LossReport::data(1.0, 1, 0);
        let dec = Matrix::from_rows(&[vec![2.0, -3.0, 0.0, 7.0]]).unwrap();
        let mut g = Gradients {
            decisions: Matrix::zeros(1, 4),
            chain: None,
            regressors: vec![],
        };
        add_l1(&mut rep, &mut g, &dec, 0.0).unwrap();
        assert_eq!(g.decisions.as_slice(), &[0.0; 4]);
        assert_eq!(rep.loss, 1.0);
        assert_eq!(rep.l1_penalty, None);

        add_l1(&mut rep, &mut g, &dec, 1.0).unwrap();
        assert_eq!(g.decisions.as_slice(), &[1.0, -1.0, 0.0, 0.0]);
        assert_eq!(rep.l1_penalty, Some(5.0));
        assert_eq!(rep.loss, 6.0);
        assert!(add_l1(&mut rep, &mut g, &dec, -0.1).is_err());
    }

    #[test]
    fn bad_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = SemNet::encode(
            graft_classifier(1, 2).unwrap(),
            2,
            Task::Classification,
            0,
            &mut rng,
        )
        .unwrap();
        let empty: Vec<Vec<f64>> = vec![];
        assert!(backward_classification(&net, &empty, &[]).is_err());
        assert!(backward_classification(&net, &[vec![1.0, 2.0]], &[2]).is_err());
        assert!(backward_classification(&net, &[vec![1.0]], &[0]).is_err());
        assert!(backward_regression(&net, &[vec![1.0, 2.0]], &[vec![1.0]]).is_err());
        let err = backward_classification(&net, &[vec![f64::NAN, 0.0]], &[0]).unwrap_err();
        assert!(matches!(err, Error::NumericFailure(_)));
    }
}
