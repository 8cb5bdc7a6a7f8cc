//! Update rules, learning-rate schedules, clipping and the factor chain.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    #[serde(alias = "rms_prop")]
    RmsProp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerKind {
    /// Geometric per-epoch decay: `lr₀ · decay^e`.
    Linear,
    /// Half cosine from `lr₀` down to 0 over the run.
    Cosine,
}

pub const RMSPROP_SMOOTHING: f64 = 0.99;
pub const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
pub const EPS: f64 = 1e-8;

/// Training hyperparameters. Field names follow the run configuration keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    #[serde(rename = "epoch")]
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    #[serde(rename = "mtm", default)]
    pub momentum: Option<f64>,
    #[serde(default)]
    pub scheduler_type: Option<SchedulerKind>,
    #[serde(default)]
    pub scheduler_decay: Option<f64>,
    pub batch_size: usize,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub grad_clip: Option<f64>,
    #[serde(default)]
    pub overparams: Option<Vec<usize>>,
}

impl OptimConfig {
    pub fn new(optimizer: OptimizerKind, lr: f64, epochs: usize, batch_size: usize) -> Self {
        Self {
            epochs,
            optimizer,
            lr,
            momentum: None,
            scheduler_type: None,
            scheduler_decay: None,
            batch_size,
            lambda: None,
            grad_clip: None,
            overparams: None,
        }
    }

    pub fn momentum(&self) -> f64 {
        self.momentum.unwrap_or(0.0)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda.unwrap_or(0.0)
    }

    pub fn widths(&self) -> &[usize] {
        self.overparams.as_deref().unwrap_or(&[])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.epochs < 1 {
            return bad("epoch must be at least 1".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        let m = self.momentum();
        if !(0.0..1.0).contains(&m) {
            return bad(format!("mtm must lie in [0, 1), got {m}"));
        }
        if let Some(d) = self.scheduler_decay {
            if !(d > 0.0 && d <= 1.0) {
                return bad(format!("scheduler_decay must lie in (0, 1], got {d}"));
            }
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1".into());
        }
        let l = self.lambda();
        if !(l.is_finite() && l >= 0.0) {
            return bad(format!("lambda must be non-negative, got {l}"));
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return bad(format!("grad_clip must be positive, got {c}"));
            }
        }
        if self.widths().contains(&0) {
            return bad("overparams widths must be positive".into());
        }
        Ok(())
    }

    /// Learning rate for a zero-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match (self.scheduler_type, self.scheduler_decay) {
            (Some(SchedulerKind::Cosine), _) => {
                let t = epoch as f64 / self.epochs as f64;
                self.lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
            (_, Some(decay)) => self.lr * decay.powi(epoch as i32),
            _ => self.lr,
        }
    }
}

#[derive(Debug, Clone)]
struct Slot {
    first: Vec<f64>,
    second: Vec<f64>,
}

/// Per-tensor optimizer buffers.
#[derive(Debug, Clone)]
pub struct OptimState {
    kind: OptimizerKind,
    momentum: f64,
    slots: Vec<Slot>,
    shapes: Vec<(usize, usize)>,
    steps: u64,
    lr: f64,
}

impl OptimState {
    pub fn new(config: &OptimConfig, shapes: &[(usize, usize)]) -> Self {
        let slots = shapes
            .iter()
            .map(|&(r, c)| Slot {
                first: vec![0.0; r * c],
                second: vec![0.0; r * c],
            })
            .collect();
        Self {
            kind: config.optimizer,
            momentum: config.momentum(),
            slots,
            shapes: shapes.to_vec(),
            steps: 0,
            lr: config.lr,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Sets the learning rate for the given epoch.
    pub fn decay_lr(&mut self, config: &OptimConfig, epoch: usize) -> f64 {
        self.lr = config.lr_at(epoch);
        self.lr
    }

    /// Applies one update to every tensor in order.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[&Matrix]) -> Result<()> {
        if params.len() != self.slots.len() || grads.len() != self.slots.len() {
            return Err(Error::invalid(format!(
                "optimizer holds {} tensors, got {} params and {} grads",
                self.slots.len(),
                params.len(),
                grads.len()
            )));
        }
        for (t, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.shapes[t] || g.shape() != self.shapes[t] {
                return Err(Error::invalid(format!(
                    "tensor {t}: expected {:?}, got params {:?} and grads {:?}",
                    self.shapes[t],
                    p.shape(),
                    g.shape()
                )));
            }
        }
        self.steps += 1;
        let (lr, mtm) = (self.lr, self.momentum);
        let t = self.steps as i32;
        for ((p, g), slot) in params.iter_mut().zip(grads).zip(&mut self.slots) {
            let w = p.as_mut_slice();
            let g = g.as_slice();
            match self.kind {
                OptimizerKind::Sgd => {
                    for ((w, g), v) in w.iter_mut().zip(g).zip(&mut slot.first) {
                        *v = mtm * *v + g;
                        *w -= lr * *v;
                    }
                }
                OptimizerKind::RmsProp => {
                    let a = RMSPROP_SMOOTHING;
                    for (i, (w, g)) in w.iter_mut().zip(g).enumerate() {
                        let sq = &mut slot.second[i];
                        *sq = a * *sq + (1.0 - a) * g * g;
                        let scaled = g / (sq.sqrt() + EPS);
                        if mtm > 0.0 {
                            let buf = &mut slot.first[i];
                            *buf = mtm * *buf + scaled;
                            *w -= lr * *buf;
                        } else {
                            *w -= lr * scaled;
                        }
                    }
                }
                OptimizerKind::Adam => {
                    let (b1, b2) = ADAM_BETAS;
                    let c1 = 1.0 - b1.powi(t);
                    let c2 = 1.0 - b2.powi(t);
                    for (i, (w, g)) in w.iter_mut().zip(g).enumerate() {
                        let m = &mut slot.first[i];
                        let v = &mut slot.second[i];
                        *m = b1 * *m + (1.0 - b1) * g;
                        *v = b2 * *v + (1.0 - b2) * g * g;
                        *w -= lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Global L2 norm across tensors.
pub fn global_norm(grads: &[&Matrix]) -> f64 {
    grads.iter().map(|g| g.sum_squares()).sum::<f64>().sqrt()
}

/// Rescales all tensors together so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grads(grads: &mut [&mut Matrix], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.sum_squares()).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale(s);
        }
    }
    norm
}

/// Factors `F_1 … F_p` with `F_1: widths[0] × (n+1)` and `F_p: K × widths[last]`,
/// each drawn uniformly in `±1/√(columns)`. Empty `widths` gives a single
/// `K × (n+1)` factor.
pub fn make_overparam_chain<R: Rng + ?Sized>(
    k: usize,
    dim: usize,
    widths: &[usize],
    rng: &mut R,
) -> Result<Vec<Matrix>> {
    if widths.contains(&0) {
        return Err(Error::invalid("overparams widths must be positive"));
    }
    let mut dims = vec![dim + 1];
    dims.extend_from_slice(widths);
    dims.push(k);
    Ok(dims
        .windows(2)
        .map(|w| {
            let (cols, rows) = (w[0], w[1]);
            let r = 1.0 / (cols as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.gen_range(-r..=r)).collect();
            Matrix::from_vec(rows, cols, data).expect("sizes agree")
        })
        .collect())
}

/// `F_p · … · F_1`.
pub fn fold_chain(chain: &[Matrix]) -> Result<Matrix> {
    let (first, rest) = chain
        .split_first()
        .ok_or_else(|| Error::invalid("empty factor chain"))?;
    rest.iter().try_fold(first.clone(), |acc, f| f.matmul(&acc))
}

/// Pulls a gradient on the folded matrix back to each factor:
/// `dF_k = (F_p⋯F_{k+1})ᵀ · dW · (F_{k−1}⋯F_1)ᵀ`.
pub fn chain_gradients(chain: &[Matrix], d_folded: &Matrix) -> Result<Vec<Matrix>> {
    let p = chain.len();
    if p == 0 {
        return Err(Error::invalid("empty factor chain"));
    }
    // prefix[k] = F_k ⋯ F_1 (prefix[0] = I), suffix[k] = F_p ⋯ F_{k+1} (suffix[p] = I).
    let mut prefix = vec![Matrix::identity(chain[0].cols())];
    for f in chain {
        let next = f.matmul(prefix.last().unwrap())?;
        prefix.push(next);
    }
    let mut suffix = vec![Matrix::identity(chain[p - 1].rows()); p + 1];
    for k in (0..p).rev() {
        suffix[k] = suffix[k + 1].matmul(&chain[k])?;
    }
    if d_folded.shape() != prefix[p].shape() {
        return Err(Error::invalid(
            "gradient shape does not match the folded chain",
        ));
    }
    (1..=p)
        .map(|k| suffix[k].t_matmul(d_folded)?.matmul_t(&prefix[k - 1]))
        .collect()
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn scalar(v: f64) -> Matrix {
        Matrix::from_vec(1, 1, vec![v]).unwrap()
    }

    fn cfg(kind: OptimizerKind, lr: f64) -> OptimConfig {
        OptimConfig::new(kind, lr, 10, 8)
    }

    #[test]
    fn sgd_single_step() {
        let c = cfg(OptimizerKind::Sgd, 0.1);
        let mut st = OptimState::new(&c, &[(1, 1)]);
        let mut w = scalar(1.0);
        st.step(&mut [&mut w], &[&scalar(2.0)]).unwrap();
        assert_abs_diff_eq!(w[(0, 0)], 0.8, epsilon = 1e-15);
        assert_eq!(st.steps(), 1);
    }

    #[test]
    fn adam_first_step_is_lr() {
        for g in [1.0, -2.0, 50.0] {
            let c = cfg(OptimizerKind::Adam, 0.05);
            let mut st = OptimState::new(&c, &[(1, 1)]);
            let mut w = scalar(0.3);
            st.step(&mut [&mut w], &[&scalar(g)]).unwrap();
            assert_abs_diff_eq!((w[(0, 0)] - 0.3).abs(), 0.05, epsilon = 1e-9);
        }
    }

    #[test]
    fn sgd_quadratic_converges() {
        let c = cfg(OptimizerKind::Sgd, 0.1);
        let mut st = OptimState::new(&c, &[(1, 1)]);
        let mut w = scalar(5.0);
        for _ in 0..100 {
            let g = scalar(2.0 * w[(0, 0)]);
            st.step(&mut [&mut w], &[&g]).unwrap();
        }
        assert!(w[(0, 0)].abs() < 1e-8);
        assert_abs_diff_eq!(w[(0, 0)], 5.0 * 0.8f64.powi(100), epsilon = 1e-20);
    }

    #[test]
    fn rmsprop_moves_against_gradient() {
        let mut c = cfg(OptimizerKind::RmsProp, 0.01);
        c.momentum = Some(0.2);
        let mut st = OptimState::new(&c, &[(1, 2)]);
        let mut w = Matrix::from_vec(1, 2, vec![1.0, 1.0]).unwrap();
        let g = Matrix::from_vec(1, 2, vec![3.0, -3.0]).unwrap();
        st.step(&mut [&mut w], &[&g]).unwrap();
        // First step: sq = 0.01 g², so the step is lr / sqrt(0.01) = 10·lr.
        assert_abs_diff_eq!(w[(0, 0)], 1.0 - 0.1, epsilon = 1e-8);
        assert_abs_diff_eq!(w[(0, 1)], 1.0 + 0.1, epsilon = 1e-8);
    }

    #[test]
    fn step_shape_mismatch() {
        let c = cfg(OptimizerKind::Sgd, 0.1);
        let mut st = OptimState::new(&c, &[(1, 1)]);
        let mut w = Matrix::zeros(2, 1);
        assert!(st.step(&mut [&mut w], &[&Matrix::zeros(2, 1)]).is_err());
        assert!(st.step(&mut [], &[]).is_err());
        assert_eq!(st.steps(), 0);
    }

    #[test]
    fn schedules() {
        let mut c = cfg(OptimizerKind::Sgd, 0.4);
        c.scheduler_type = Some(SchedulerKind::Linear);
        c.scheduler_decay = Some(0.95);
        assert_abs_diff_eq!(c.lr_at(2), 0.361, epsilon = 1e-12);
        c.scheduler_decay = Some(1.0);
        assert_eq!(c.lr_at(7), 0.4);
        c.scheduler_type = Some(SchedulerKind::Cosine);
        assert_abs_diff_eq!(c.lr_at(0), 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(c.lr_at(5), 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(c.lr_at(10), 0.0, epsilon = 1e-15);
        let mut st = OptimState::new(&c, &[]);
        assert_abs_diff_eq!(st.decay_lr(&c, 5), 0.2, epsilon = 1e-15);
        assert_eq!(st.lr(), c.lr_at(5));
    }

    #[test]
    fn validation() {
        let ok = cfg(OptimizerKind::Adam, 0.1);
        assert!(ok.validate().is_ok());
        let mut c = ok.clone();
        c.momentum = Some(1.0);
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.scheduler_decay = Some(0.0);
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.lambda = Some(-1.0);
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.grad_clip = Some(0.0);
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.overparams = Some(vec![0]);
        assert!(c.validate().is_err());
        let mut c = ok;
        c.lr = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn mnist_row_parses() {
        let c: OptimConfig = serde_json::from_str(
            r#"{"epoch":100,"optimizer":"sgd","lr":0.4,"mtm":0.9,"scheduler_type":"linear",
                "scheduler_decay":0.95,"batch_size":128,"lambda":null,"grad_clip":null,"overparams":null}"#,
        )
        .unwrap();
        c.validate().unwrap();
        assert_eq!(c.optimizer, OptimizerKind::Sgd);
        assert_eq!(c.momentum(), 0.9);
        let err = serde_json::from_str::<OptimConfig>(
            r#"{"epoch":1,"optimizer":"sgd","lr":0.1,"batch_size":1,"beta":2}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("beta"));
    }

    #[test]
    fn clipping() {
        let mut a = Matrix::from_vec(1, 2, vec![2.0f64.sqrt(), 0.0]).unwrap();
        let mut b = Matrix::from_vec(1, 1, vec![2.0f64.sqrt()]).unwrap();
        let before = clip_grads(&mut [&mut a, &mut b], 1.0);
        assert_abs_diff_eq!(before, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(a[(0, 0)], 2.0f64.sqrt() / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b[(0, 0)], 2.0f64.sqrt() / 2.0, epsilon = 1e-15);

        let mut c = Matrix::from_vec(1, 1, vec![0.5]).unwrap();
        clip_grads(&mut [&mut c], 1.0);
        assert_eq!(c[(0, 0)], 0.5);
    }

    #[test]
    fn satimages_chain_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let chain = make_overparam_chain(63, 36, &[4032], &mut rng).unwrap();
        assert_eq!(chain.len(), 2);
        assert_eq!(chain[0].shape(), (4032, 37));
        assert_eq!(chain[1].shape(), (63, 4032));
        assert_eq!(fold_chain(&chain).unwrap().shape(), (63, 37));
    }

    #[test]
    fn empty_widths_is_single_factor() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let chain = make_overparam_chain(3, 2, &[], &mut rng).unwrap();
        assert_eq!(chain.len(), 1);
        assert_eq!(fold_chain(&chain).unwrap(), chain[0]);
        assert!(make_overparam_chain(3, 2, &[4, 0], &mut rng).is_err());
    }
}
