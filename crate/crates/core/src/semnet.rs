//! The network encoding of an oblique tree.
//!
//! Layers, for `K` internal nodes and `Λ` leaves over `n` features:
//!
//! 1. `I = A·x + b`: the only trainable decision layer (`K` nodes).
//! 2. `s = relu(split_mask · I)`: `2K` nodes ordered `(⊤_0..⊤_{K−1}, ⊥_0..⊥_{K−1})`,
//!    `split_mask` is `+1` into `⊤_i` and `−1` into `⊥_i`.
//! 3. `L = leaf_mask · s`: one node per leaf. `leaf_mask[j][⊤_i]` is 0 iff
//!    leaf `j` is a left descendant of node `i`, `leaf_mask[j][⊥_i]` is 0 iff
//!    it is a right descendant; every other entry is 1.
//!
//! For every input, the leaf with the largest `L_j` is exactly the leaf reached
//! by hard traversal of the tree. Classification adds a max-pool per class over
//! `L`; regression adds per-leaf linear models `R_j = θ_j·x + α_j` selected by a
//! one-hot of `argmax L`.

use std::borrow::Cow;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{affine, Matrix};
use crate::tree::{DecisionParams, LeafPayload, LeafRegressors, Sign, TreeStructure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Classification => "classification",
            Task::Regression => "regression",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeCounts {
    /// `n` features plus the constant bias input.
    pub inputs: usize,
    pub decision: usize,
    pub split: usize,
    pub leaves: usize,
}

impl NodeCounts {
    pub fn total(&self) -> usize {
        self.inputs + self.decision + self.split + self.leaves
    }
}

#[derive(Debug, Clone)]
pub struct SemNet {
    tree: TreeStructure,
    dim: usize,
    task: Task,
    decisions: Matrix,
    chain: Option<Vec<Matrix>>,
    split_mask: Matrix,
    leaf_mask: Matrix,
    class_map: Option<Matrix>,
    regressors: Option<LeafRegressors>,
    leaf_classes: Vec<usize>,
}

/// Activations retained from one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardRecord {
    /// Decision layer `I`, length `K`.
    pub decisions: Vec<f64>,
    /// Post-ReLU split layer, `⊤` block then `⊥` block, length `2K`.
    pub split: Vec<f64>,
    /// Leaf scores `L`, length `Λ`.
    pub leaves: Vec<f64>,
    pub selected_leaf: usize,
    /// Max-pooled class scores `C` (classification only).
    pub classes: Option<Vec<f64>>,
    pub regression: Option<RegressionRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionRecord {
    /// `R_j` per output dimension: `values[d][j]`.
    pub values: Vec<Vec<f64>>,
    /// One-hot of the selected leaf.
    pub one_hot: Vec<f64>,
    pub out: Vec<f64>,
}

impl ForwardRecord {
    pub fn top(&self) -> &[f64] {
        &self.split[..self.decisions.len()]
    }

    pub fn bot(&self) -> &[f64] {
        &self.split[self.decisions.len()..]
    }

    /// Class chosen by `argmax C`; ties go to the class of the selected leaf.
    pub fn predicted_class(&self, net: &SemNet) -> Option<usize> {
        let c = self.classes.as_ref()?;
        let own = net.leaf_classes[self.selected_leaf];
        let best = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if c[own] == best {
            return Some(own);
        }
        c.iter().position(|&v| v == best)
    }
}

#[inline]
fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

impl SemNet {
    /// Builds masks for `tree` and draws decision rows uniformly in
    /// `[−1/√(n+1), 1/√(n+1)]` with zero biases.
    pub fn encode<R: Rng + ?Sized>(
        tree: TreeStructure,
        dim: usize,
        task: Task,
        outputs: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("input dimension must be at least 1"));
        }
        let r = 1.0 / ((dim + 1) as f64).sqrt();
        let k = tree.num_internal();
        let mut decisions = Matrix::zeros(k, dim + 1);
        for i in 0..k {
            for v in &mut decisions.row_mut(i)[..dim] {
                *v = rng.gen_range(-r..=r);
            }
        }
        let regressors = match task {
            Task::Classification => None,
            Task::Regression => {
                if outputs == 0 {
                    return Err(Error::invalid("regression needs at least one output"));
                }
                let mut regs = LeafRegressors::zeros(tree.num_leaves(), dim, outputs);
                for b in &mut regs.blocks {
                    for j in 0..b.rows() {
                        for v in &mut b.row_mut(j)[..dim] {
                            *v = rng.gen_range(-r..=r);
                        }
                    }
                }
                Some(regs)
            }
        };
        let params = DecisionParams::from_affine(&decisions)?;
        Self::from_parts(tree, &params, task, regressors)
    }

    /// Assembles a network around existing decisions (and regressors).
    pub fn from_parts(
        tree: TreeStructure,
        params: &DecisionParams,
        task: Task,
        regressors: Option<LeafRegressors>,
    ) -> Result<Self> {
        let k = tree.num_internal();
        let n_leaves = tree.num_leaves();
        let dim = params.dim();
        if dim == 0 {
            return Err(Error::invalid("input dimension must be at least 1"));
        }
        if params.num_nodes() != k {
            return Err(Error::invalid(format!(
                "{} decision rows for {k} internal nodes",
                params.num_nodes()
            )));
        }

        let mut split_mask = Matrix::zeros(2 * k, k);
        for i in 0..k {
            split_mask[(i, i)] = 1.0;
            split_mask[(k + i, i)] = -1.0;
        }
        let mut leaf_mask = Matrix::zeros(n_leaves, 2 * k);
        leaf_mask.fill(1.0);
        for j in 0..n_leaves {
            for d in tree.leaf_decisions(j)? {
                match d.sign {
                    Sign::Negative => leaf_mask[(j, d.node)] = 0.0,
                    Sign::Positive => leaf_mask[(j, k + d.node)] = 0.0,
                }
            }
        }

        let (tree, class_map, leaf_classes, regressors) = match task {
            Task::Classification => {
                let num_classes = tree.num_classes().ok_or_else(|| {
                    Error::InvalidState("classification tree has leaves without a class".into())
                })?;
                let mut map = Matrix::zeros(num_classes, n_leaves);
                let mut leaf_classes = Vec::with_capacity(n_leaves);
                for (j, p) in tree.leaves().iter().enumerate() {
                    let LeafPayload::Class(c) = *p else {
                        unreachable!()
                    };
                    map[(c, j)] = 1.0;
                    leaf_classes.push(c);
                }
                (tree, Some(map), leaf_classes, None)
            }
            Task::Regression => {
                let regs = regressors.unwrap_or_else(|| LeafRegressors::zeros(n_leaves, dim, 1));
                if regs.blocks.is_empty()
                    || regs.blocks.iter().any(|b| b.shape() != (n_leaves, dim + 1))
                {
                    return Err(Error::invalid("regressor blocks must be Λ × (n+1)"));
                }
                (
                    tree.with_regressor_payloads(),
                    None,
                    vec![0; n_leaves],
                    Some(regs),
                )
            }
        };

        Ok(Self {
            tree,
            dim,
            task,
            decisions: params.to_affine(),
            chain: None,
            split_mask,
            leaf_mask,
            class_map,
            regressors,
            leaf_classes,
        })
    }

    pub fn tree(&self) -> &TreeStructure {
        &self.tree
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn num_internal(&self) -> usize {
        self.tree.num_internal()
    }

    pub fn num_leaves(&self) -> usize {
        self.tree.num_leaves()
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.class_map.as_ref().map(Matrix::rows)
    }

    pub fn outputs(&self) -> usize {
        self.regressors.as_ref().map_or(0, LeafRegressors::outputs)
    }

    pub fn split_mask(&self) -> &Matrix {
        &self.split_mask
    }

    pub fn leaf_mask(&self) -> &Matrix {
        &self.leaf_mask
    }

    pub fn class_map(&self) -> Option<&Matrix> {
        self.class_map.as_ref()
    }

    pub fn leaf_class(&self, leaf: usize) -> usize {
        self.leaf_classes[leaf]
    }

    pub fn regressors(&self) -> Option<&LeafRegressors> {
        self.regressors.as_ref()
    }

    pub fn regressors_mut(&mut self) -> Option<&mut LeafRegressors> {
        self.regressors.as_mut()
    }

    pub fn node_counts(&self) -> NodeCounts {
        let k = self.num_internal();
        NodeCounts {
            inputs: self.dim + 1,
            decision: k,
            split: 2 * k,
            leaves: self.num_leaves(),
        }
    }

    /// `K·(n+1)`: the same count as the tree's `A_i` and `b_i` entries.
    pub fn trainable_decision_params(&self) -> usize {
        self.num_internal() * (self.dim + 1)
    }

    /// The effective `K × (n+1)` decision matrix, folding the factor chain
    /// when one is attached.
    pub fn decisions(&self) -> Cow<'_, Matrix> {
        match &self.chain {
            None => Cow::Borrowed(&self.decisions),
            Some(chain) => Cow::Owned(
                crate::optim::fold_chain(chain).expect("chain shapes validated on attach"),
            ),
        }
    }

    /// The stored decision matrix; stale while a chain is attached.
    pub fn raw_decisions_mut(&mut self) -> &mut Matrix {
        &mut self.decisions
    }

    pub fn chain(&self) -> Option<&[Matrix]> {
        self.chain.as_deref()
    }

    pub fn chain_mut(&mut self) -> Option<&mut Vec<Matrix>> {
        self.chain.as_mut()
    }

    /// Replaces the decision matrix by a product of factors during training.
    pub fn attach_chain(&mut self, chain: Vec<Matrix>) -> Result<()> {
        let folded = crate::optim::fold_chain(&chain)?;
        if folded.shape() != self.decisions.shape() {
            return Err(Error::invalid(format!(
                "chain folds to {:?}, decisions are {:?}",
                folded.shape(),
                self.decisions.shape()
            )));
        }
        self.chain = Some(chain);
        Ok(())
    }

    /// Multiplies the chain out into the decision matrix and drops it.
    pub fn fold(&mut self) {
        if let Some(chain) = self.chain.take() {
            self.decisions =
                crate::optim::fold_chain(&chain).expect("chain shapes validated on attach");
        }
    }

    /// Trainable tensors in optimizer order: the chain factors (or the
    /// decision matrix when unchained), then one regressor block per output.
    pub fn trainable_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = match &mut self.chain {
            Some(chain) => chain.iter_mut().collect(),
            None => vec![&mut self.decisions],
        };
        if let Some(r) = &mut self.regressors {
            out.extend(r.blocks.iter_mut());
        }
        out
    }

    pub fn trainable_shapes(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = match &self.chain {
            Some(chain) => chain.iter().map(Matrix::shape).collect(),
            None => vec![self.decisions.shape()],
        };
        if let Some(r) = &self.regressors {
            out.extend(r.blocks.iter().map(Matrix::shape));
        }
        out
    }

    pub fn decision_params(&self) -> DecisionParams {
        DecisionParams::from_affine(&self.decisions()).expect("decision matrix has a bias column")
    }

    /// Converts back to a tree with identical semantics.
    pub fn decode(&self) -> (TreeStructure, DecisionParams, Option<LeafRegressors>) {
        (
            self.tree.clone(),
            self.decision_params(),
            self.regressors.clone(),
        )
    }

    /// Flips one leaf-connectivity bit. Breaks equivalence; used by mutation tests.
    pub fn perturb_leaf_mask(&mut self, leaf: usize, column: usize) {
        let v = &mut self.leaf_mask[(leaf, column)];
        *v = 1.0 - *v;
    }

    /// SHA-256 over the shapes and contents of every fixed mask.
    pub fn masks_hash(&self) -> String {
        let mut h = Sha256::new();
        let mut feed = |m: &Matrix| {
            h.update((m.rows() as u64).to_le_bytes());
            h.update((m.cols() as u64).to_le_bytes());
            for v in m.as_slice() {
                h.update(v.to_le_bytes());
            }
        };
        feed(&self.split_mask);
        feed(&self.leaf_mask);
        if let Some(c) = &self.class_map {
            feed(c);
        }
        hex::encode(h.finalize())
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardRecord> {
        if x.len() != self.dim {
            return Err(Error::invalid(format!(
                "input has dimension {}, network expects {}",
                x.len(),
                self.dim
            )));
        }
        Ok(self.forward_with(&self.decisions(), x))
    }

    /// Forward pass against an already folded decision matrix.
    pub fn forward_with(&self, decisions: &Matrix, x: &[f64]) -> ForwardRecord {
        let k = self.num_internal();
        let i_layer: Vec<f64> = decisions.iter_rows().map(|row| affine(row, x)).collect();

        let mut split = Vec::with_capacity(2 * k);
        for row in self.split_mask.iter_rows() {
            let mut acc = 0.0;
            for (w, v) in row.iter().zip(&i_layer) {
                if *w != 0.0 {
                    acc += w * v;
                }
            }
            split.push(relu(acc));
        }

        let leaves: Vec<f64> = self
            .leaf_mask
            .iter_rows()
            .map(|row| {
                let mut acc = 0.0;
                for (m, s) in row.iter().zip(&split) {
                    if *m != 0.0 {
                        acc += s;
                    }
                }
                acc
            })
            .collect();

        let selected_leaf = self.select_leaf(&leaves, &split);

        let classes = self.class_map.as_ref().map(|map| {
            map.iter_rows()
                .map(|members| {
                    members
                        .iter()
                        .zip(&leaves)
                        .filter(|(m, _)| **m != 0.0)
                        .map(|(_, l)| *l)
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect()
        });

        let regression = self.regressors.as_ref().map(|regs| {
            let values: Vec<Vec<f64>> = regs
                .blocks
                .iter()
                .map(|b| b.iter_rows().map(|row| affine(row, x)).collect())
                .collect();
            let mut one_hot = vec![0.0; leaves.len()];
            one_hot[selected_leaf] = 1.0;
            let out = values
                .iter()
                .map(|r| r.iter().zip(&one_hot).map(|(r, h)| r * h).sum())
                .collect();
            RegressionRecord {
                values,
                one_hot,
                out,
            }
        });

        ForwardRecord {
            decisions: i_layer,
            split,
            leaves,
            selected_leaf,
            classes,
            regression,
        }
    }

    /// `argmax L`. Equal scores arise only when some `I_i = 0`; among the
    /// tied leaves the one whose masked-out inputs are all inactive, reading
    /// a zero decision as "left", wins.
    fn select_leaf(&self, leaves: &[f64], split: &[f64]) -> usize {
        let best = leaves.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let candidates: Vec<usize> = (0..leaves.len()).filter(|&j| leaves[j] == best).collect();
        let first = candidates[0];
        if candidates.len() == 1 {
            return first;
        }
        let k = self.num_internal();
        candidates
            .iter()
            .copied()
            .find(|&j| {
                let mask = self.leaf_mask.row(j);
                (0..k).all(|i| {
                    let top_cut = mask[i] == 0.0;
                    let bot_cut = mask[k + i] == 0.0;
                    (!top_cut || split[i] == 0.0) && (!bot_cut || split[i] > 0.0)
                })
            })
            .unwrap_or(first)
    }

    /// Hard-tree prediction through the network: class id for classification,
    /// `out` for regression.
    pub fn predict(&self, x: &[f64]) -> Result<crate::tree::Prediction> {
        let rec = self.forward(x)?;
        Ok(match &rec.regression {
            Some(r) => crate::tree::Prediction::Values(r.out.clone()),
            None => crate::tree::Prediction::Class(
                rec.predicted_class(self).expect("classification head"),
            ),
        })
    }
}

/// Counts inputs where the network's selected leaf differs from the tree's
/// traversal leaf. Zero for a faithful encoding.
pub fn check_equivalence(
    net: &SemNet,
    tree: &TreeStructure,
    params: &DecisionParams,
    inputs: &[Vec<f64>],
) -> Result<usize> {
    if tree.num_internal() != params.num_nodes() {
        return Err(Error::invalid("tree and params disagree on node count"));
    }
    if let Some(bad) = inputs
        .iter()
        .find(|x| x.len() != net.dim() || x.len() != params.dim())
    {
        return Err(Error::invalid(format!(
            "input of dimension {} does not match",
            bad.len()
        )));
    }
    let decisions = net.decisions();
    Ok(inputs
        .par_iter()
        .filter(|x| {
            net.forward_with(&decisions, x).selected_leaf != tree.traverse_unchecked(params, x)
        })
        .count())
}
