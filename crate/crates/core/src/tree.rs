//! Oblique decision trees: structure, builders, and hard traversal.
//!
//! Internal nodes and leaves live in separate index spaces (`0..K` and
//! `0..Λ`). Builders number internal nodes breadth-first and leaves
//! left-to-right, so a balanced tree uses heap order for its internal nodes.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeRef {
    Internal(usize),
    Leaf(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InternalNode {
    pub left: NodeRef,
    pub right: NodeRef,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafPayload {
    Unset,
    Class(usize),
    /// Index of the leaf's row in every [`LeafRegressors`] block.
    Regressor(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    /// The decision `A_i x + b_i > 0` must hold (leaf is in the right subtree).
    Positive,
    /// The decision must fail (leaf is in the left subtree).
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SignedDecision {
    pub node: usize,
    pub sign: Sign,
}

/// Signed ancestor decisions of a leaf, ordered root-first.
pub type SignedDecisionSet = Vec<SignedDecision>;

/// Recursive shape description used by the builders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Shape {
    Leaf(LeafPayload),
    Split(Box<Shape>, Box<Shape>),
}

impl Shape {
    pub fn split(left: Shape, right: Shape) -> Shape {
        Shape::Split(Box::new(left), Box::new(right))
    }

    fn balanced(height: usize) -> Shape {
        if height == 0 {
            Shape::Leaf(LeafPayload::Unset)
        } else {
            Shape::split(Self::balanced(height - 1), Self::balanced(height - 1))
        }
    }

    pub fn num_leaves(&self) -> usize {
        match self {
            Shape::Leaf(_) => 1,
            Shape::Split(l, r) => l.num_leaves() + r.num_leaves(),
        }
    }

    fn map_leaves(self, f: &mut impl FnMut(LeafPayload) -> Shape) -> Shape {
        match self {
            Shape::Leaf(p) => f(p),
            Shape::Split(l, r) => Shape::split(l.map_leaves(f), r.map_leaves(f)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeStructure {
    internal: Vec<InternalNode>,
    leaves: Vec<LeafPayload>,
    root: NodeRef,
    height: usize,
    paths: Vec<SignedDecisionSet>,
}

impl TreeStructure {
    /// Validates the child graph and precomputes every leaf's decision path.
    pub fn new(
        internal: Vec<InternalNode>,
        leaves: Vec<LeafPayload>,
        root: NodeRef,
    ) -> Result<Self> {
        let k = internal.len();
        let n_leaves = leaves.len();
        if k == 0 {
            return Err(Error::invalid("tree needs at least one internal node"));
        }
        if n_leaves != k + 1 {
            return Err(Error::invalid(format!(
                "binary tree with {k} internal nodes must have {} leaves, got {n_leaves}",
                k + 1
            )));
        }
        let check = |r: NodeRef| match r {
            NodeRef::Internal(i) if i >= k => {
                Err(Error::invalid(format!("internal id {i} out of range")))
            }
            NodeRef::Leaf(j) if j >= n_leaves => {
                Err(Error::invalid(format!("leaf id {j} out of range")))
            }
            _ => Ok(()),
        };
        check(root)?;
        if !matches!(root, NodeRef::Internal(_)) {
            return Err(Error::invalid("root must be an internal node"));
        }

        let mut internal_parents = vec![0usize; k];
        let mut leaf_parents = vec![0usize; n_leaves];
        for (i, node) in internal.iter().enumerate() {
            check(node.left)?;
            check(node.right)?;
            if node.left == node.right {
                return Err(Error::invalid(format!(
                    "internal node {i} has identical children"
                )));
            }
            for child in [node.left, node.right] {
                match child {
                    NodeRef::Internal(c) => internal_parents[c] += 1,
                    NodeRef::Leaf(c) => leaf_parents[c] += 1,
                }
            }
        }
        let NodeRef::Internal(root_id) = root else {
            unreachable!()
        };
        for (i, &p) in internal_parents.iter().enumerate() {
            let expected = usize::from(i != root_id);
            if p != expected {
                return Err(Error::invalid(format!(
                    "internal node {i} has {p} parents, expected {expected}"
                )));
            }
        }
        if let Some(j) = leaf_parents.iter().position(|&p| p != 1) {
            return Err(Error::invalid(format!(
                "leaf {j} has {} parents, expected 1",
                leaf_parents[j]
            )));
        }

        // Every node has one parent and the root none; a cycle would leave
        // part of the graph unreachable from the root.
        let mut paths = vec![None; n_leaves];
        let mut visited = 0usize;
        let mut stack = vec![(root, Vec::new())];
        while let Some((node, path)) = stack.pop() {
            visited += 1;
            if visited > k + n_leaves {
                return Err(Error::invalid("child graph contains a cycle"));
            }
            match node {
                NodeRef::Leaf(j) => paths[j] = Some(path),
                NodeRef::Internal(i) => {
                    let n = internal[i];
                    let mut right = path.clone();
                    right.push(SignedDecision {
                        node: i,
                        sign: Sign::Positive,
                    });
                    let mut left = path;
                    left.push(SignedDecision {
                        node: i,
                        sign: Sign::Negative,
                    });
                    stack.push((n.right, right));
                    stack.push((n.left, left));
                }
            }
        }
        if visited != k + n_leaves {
            return Err(Error::invalid("child graph is not connected to the root"));
        }
        let paths: Vec<SignedDecisionSet> = paths
            .into_iter()
            .collect::<Option<_>>()
            .ok_or_else(|| Error::invalid("leaf unreachable from root"))?;
        let height = paths.iter().map(Vec::len).max().unwrap_or(0);

        Ok(Self {
            internal,
            leaves,
            root,
            height,
            paths,
        })
    }

    /// Numbers internal nodes breadth-first and leaves left-to-right.
    pub fn from_shape(shape: &Shape) -> Result<Self> {
        if let Shape::Leaf(_) = shape {
            return Err(Error::invalid("tree shape must start with a split"));
        }
        let mut leaves = vec![LeafPayload::Unset; shape.num_leaves()];
        let mut internal = Vec::new();
        // (subtree, id of its first leaf); internal ids follow enqueue order.
        let mut queue = VecDeque::from([(shape, 0usize)]);
        let mut next_internal = 1;
        while let Some((s, first_leaf)) = queue.pop_front() {
            let Shape::Split(l, r) = s else {
                unreachable!()
            };
            let mut child = |c: &'_ Shape, first: usize| match c {
                Shape::Leaf(p) => {
                    leaves[first] = *p;
                    NodeRef::Leaf(first)
                }
                Shape::Split(..) => {
                    next_internal += 1;
                    NodeRef::Internal(next_internal - 1)
                }
            };
            let left = child(l, first_leaf);
            let right = child(r, first_leaf + l.num_leaves());
            if let Shape::Split(..) = **l {
                queue.push_back((l, first_leaf));
            }
            if let Shape::Split(..) = **r {
                queue.push_back((r, first_leaf + l.num_leaves()));
            }
            internal.push(InternalNode { left, right });
        }
        Self::new(internal, leaves, NodeRef::Internal(0))
    }

    pub fn internal_nodes(&self) -> &[InternalNode] {
        &self.internal
    }

    pub fn leaves(&self) -> &[LeafPayload] {
        &self.leaves
    }

    pub fn root(&self) -> NodeRef {
        self.root
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of internal nodes, `K`.
    pub fn num_internal(&self) -> usize {
        self.internal.len()
    }

    /// Number of leaves, `Λ`.
    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn depth(&self, leaf: usize) -> usize {
        self.paths[leaf].len()
    }

    /// Number of classes referenced by the leaves (max label + 1), if every
    /// leaf carries a class.
    pub fn num_classes(&self) -> Option<usize> {
        let mut max = None;
        for p in &self.leaves {
            match p {
                LeafPayload::Class(c) => max = Some(max.map_or(*c, |m: usize| m.max(*c))),
                _ => return None,
            }
        }
        max.map(|m| m + 1)
    }

    pub fn leaf_decisions(&self, leaf: usize) -> Result<&SignedDecisionSet> {
        self.paths
            .get(leaf)
            .ok_or_else(|| Error::invalid(format!("unknown leaf id {leaf}")))
    }

    pub fn with_payloads(mut self, payloads: Vec<LeafPayload>) -> Result<Self> {
        if payloads.len() != self.leaves.len() {
            return Err(Error::invalid("payload count does not match leaf count"));
        }
        self.leaves = payloads;
        Ok(self)
    }

    /// Marks every leaf as owning the regressor row with its own index.
    pub fn with_regressor_payloads(self) -> Self {
        let n = self.leaves.len();
        Self {
            leaves: (0..n).map(LeafPayload::Regressor).collect(),
            ..self
        }
    }

    /// Walks from the root: right iff `A_i x + b_i > 0`, otherwise left.
    pub fn traverse(&self, params: &DecisionParams, x: &[f64]) -> Result<usize> {
        self.check_params(params)?;
        if x.len() != params.dim() {
            return Err(Error::invalid(format!(
                "input has dimension {}, decisions expect {}",
                x.len(),
                params.dim()
            )));
        }
        Ok(self.traverse_unchecked(params, x))
    }

    pub(crate) fn traverse_unchecked(&self, params: &DecisionParams, x: &[f64]) -> usize {
        let mut node = self.root;
        loop {
            match node {
                NodeRef::Leaf(j) => return j,
                NodeRef::Internal(i) => {
                    let n = &self.internal[i];
                    node = if params.decision(i, x) > 0.0 {
                        n.right
                    } else {
                        n.left
                    };
                }
            }
        }
    }

    pub fn predict(
        &self,
        params: &DecisionParams,
        regressors: Option<&LeafRegressors>,
        x: &[f64],
    ) -> Result<Prediction> {
        let leaf = self.traverse(params, x)?;
        match self.leaves[leaf] {
            LeafPayload::Unset => Err(Error::InvalidState(format!("leaf {leaf} has no payload"))),
            LeafPayload::Class(c) => Ok(Prediction::Class(c)),
            LeafPayload::Regressor(r) => {
                let regs = regressors.ok_or_else(|| {
                    Error::InvalidState("regression leaf without regressors".into())
                })?;
                regs.check(self.num_leaves(), x.len())?;
                Ok(Prediction::Values(regs.evaluate(r, x)))
            }
        }
    }

    fn check_params(&self, params: &DecisionParams) -> Result<()> {
        if params.num_nodes() != self.num_internal() {
            return Err(Error::invalid(format!(
                "decision params have {} rows, tree has {} internal nodes",
                params.num_nodes(),
                self.num_internal()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Class(usize),
    Values(Vec<f64>),
}

/// Decision hyperplanes: one row `A_i` and offset `b_i` per internal node.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionParams {
    weights: Matrix,
    biases: Vec<f64>,
}

impl DecisionParams {
    pub fn new(weights: Matrix, biases: Vec<f64>) -> Result<Self> {
        if weights.rows() != biases.len() {
            return Err(Error::invalid(format!(
                "{} weight rows but {} biases",
                weights.rows(),
                biases.len()
            )));
        }
        Ok(Self { weights, biases })
    }

    pub fn zeros(num_nodes: usize, dim: usize) -> Self {
        Self {
            weights: Matrix::zeros(num_nodes, dim),
            biases: vec![0.0; num_nodes],
        }
    }

    /// Splits a `K × (n+1)` matrix whose last column holds the biases.
    pub fn from_affine(m: &Matrix) -> Result<Self> {
        if m.cols() == 0 {
            return Err(Error::invalid("affine decision matrix needs a bias column"));
        }
        let n = m.cols() - 1;
        let mut weights = Matrix::zeros(m.rows(), n);
        let mut biases = Vec::with_capacity(m.rows());
        for (i, row) in m.iter_rows().enumerate() {
            weights.row_mut(i).copy_from_slice(&row[..n]);
            biases.push(row[n]);
        }
        Ok(Self { weights, biases })
    }

    pub fn to_affine(&self) -> Matrix {
        let n = self.dim();
        let mut m = Matrix::zeros(self.num_nodes(), n + 1);
        for i in 0..self.num_nodes() {
            let row = m.row_mut(i);
            row[..n].copy_from_slice(self.weights.row(i));
            row[n] = self.biases[i];
        }
        m
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn num_nodes(&self) -> usize {
        self.biases.len()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    /// `A_i·x + b_i`, evaluated exactly as the network's first layer does.
    #[inline]
    pub fn decision(&self, i: usize, x: &[f64]) -> f64 {
        dot(self.weights.row(i), x) + self.biases[i]
    }
}

/// Linear leaf models, one `Λ × (n+1)` block per output dimension. Row `j`
/// holds `θ_j` in its first `n` columns and `α_j` in the last.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafRegressors {
    pub blocks: Vec<Matrix>,
}

impl LeafRegressors {
    pub fn zeros(num_leaves: usize, dim: usize, outputs: usize) -> Self {
        Self {
            blocks: vec![Matrix::zeros(num_leaves, dim + 1); outputs],
        }
    }

    pub fn outputs(&self) -> usize {
        self.blocks.len()
    }

    pub fn evaluate(&self, leaf: usize, x: &[f64]) -> Vec<f64> {
        self.blocks
            .iter()
            .map(|b| crate::linalg::affine(b.row(leaf), x))
            .collect()
    }

    fn check(&self, num_leaves: usize, dim: usize) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::InvalidState("no regressor blocks".into()));
        }
        for b in &self.blocks {
            if b.shape() != (num_leaves, dim + 1) {
                return Err(Error::invalid(format!(
                    "regressor block is {:?}, expected {:?}",
                    b.shape(),
                    (num_leaves, dim + 1)
                )));
            }
        }
        Ok(())
    }
}

/// Complete binary tree with `2^height − 1` internal nodes and unset leaves.
pub fn build_balanced(height: usize) -> Result<TreeStructure> {
    if height < 1 {
        return Err(Error::invalid("height must be at least 1"));
    }
    TreeStructure::from_shape(&Shape::balanced(height))
}

/// `⌈log2(num_classes)⌉`.
pub fn class_subtree_height(num_classes: usize) -> usize {
    debug_assert!(num_classes >= 1);
    (usize::BITS - (num_classes - 1).leading_zeros()) as usize
}

fn class_shape(count: usize, first_label: usize) -> Shape {
    if count == 1 {
        return Shape::Leaf(LeafPayload::Class(first_label));
    }
    let h = class_subtree_height(count);
    // Keep every leaf at depth h or h-1 and put the deeper ones on the left.
    let min_right = if h >= 2 { 1 << (h - 2) } else { 1 };
    let left = (1usize << (h - 1)).min(count - min_right);
    Shape::split(
        class_shape(left, first_label),
        class_shape(count - left, first_label + left),
    )
}

/// Minimal-height tree with one leaf per class, labels left-to-right.
pub fn build_class_subtree(num_classes: usize) -> Result<TreeStructure> {
    if num_classes < 2 {
        return Err(Error::invalid("need at least two classes"));
    }
    TreeStructure::from_shape(&class_shape(num_classes, 0))
}

/// Balanced tree of height `height − ⌈log2 ℓ⌉` whose leaves are each replaced
/// by a copy of the class subtree.
pub fn graft_classifier(height: usize, num_classes: usize) -> Result<TreeStructure> {
    if num_classes < 2 {
        return Err(Error::invalid("need at least two classes"));
    }
    let dc = class_subtree_height(num_classes);
    if height < dc {
        return Err(Error::invalid(format!(
            "height {height} cannot hold {num_classes} classes (needs at least {dc})"
        )));
    }
    let shape = Shape::balanced(height - dc).map_leaves(&mut |_| class_shape(num_classes, 0));
    TreeStructure::from_shape(&shape)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Internal T0..T3, leaves T4..T8 mapped to leaf ids 0..4.
    pub(crate) fn five_leaf_tree() -> TreeStructure {
        use NodeRef::*;
        let internal = vec![
            InternalNode {
                left: Internal(1),
                right: Internal(2),
            },
            InternalNode {
                left: Internal(3),
                right: Leaf(2),
            },
            InternalNode {
                left: Leaf(3),
                right: Leaf(4),
            },
            InternalNode {
                left: Leaf(0),
                right: Leaf(1),
            },
        ];
        TreeStructure::new(internal, vec![LeafPayload::Unset; 5], Internal(0)).unwrap()
    }

    fn leaf_depths(t: &TreeStructure) -> Vec<usize> {
        (0..t.num_leaves()).map(|j| t.depth(j)).collect()
    }

    #[test]
    fn balanced_counts() {
        let t = build_balanced(1).unwrap();
        assert_eq!((t.num_internal(), t.num_leaves()), (1, 2));
        let t = build_balanced(4).unwrap();
        assert_eq!((t.num_internal(), t.num_leaves()), (15, 16));
        assert!(leaf_depths(&t).iter().all(|&d| d == 4));
        let t = build_balanced(3).unwrap();
        assert_eq!(t.num_leaves(), t.num_internal() + 1);
        assert_eq!(t.num_leaves(), 8);
        assert!(t.leaves().iter().all(|p| *p == LeafPayload::Unset));
        assert!(matches!(build_balanced(0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn balanced_uses_heap_order() {
        let t = build_balanced(3).unwrap();
        for (i, n) in t.internal_nodes().iter().enumerate() {
            let child = |c: usize| {
                if c < 7 {
                    NodeRef::Internal(c)
                } else {
                    NodeRef::Leaf(c - 7)
                }
            };
            assert_eq!(n.left, child(2 * i + 1));
            assert_eq!(n.right, child(2 * i + 2));
        }
    }

    #[test]
    fn class_subtree_three_classes_matches_figure() {
        let t = build_class_subtree(3).unwrap();
        assert_eq!(t.num_internal(), 2);
        let root = t.internal_nodes()[0];
        assert_eq!(root.right, NodeRef::Leaf(2));
        assert_eq!(root.left, NodeRef::Internal(1));
        assert_eq!(t.internal_nodes()[1].left, NodeRef::Leaf(0));
        assert_eq!(t.internal_nodes()[1].right, NodeRef::Leaf(1));
        assert_eq!(leaf_depths(&t), vec![2, 2, 1]);
        let labels: Vec<_> = t.leaves().to_vec();
        assert_eq!(
            labels,
            vec![
                LeafPayload::Class(0),
                LeafPayload::Class(1),
                LeafPayload::Class(2)
            ]
        );
    }

    #[test]
    fn class_subtree_small_cases() {
        let t = build_class_subtree(2).unwrap();
        assert_eq!((t.num_internal(), t.num_leaves()), (1, 2));
        let t = build_class_subtree(4).unwrap();
        assert_eq!(leaf_depths(&t), vec![2; 4]);
        assert_eq!(t.num_classes(), Some(4));
        for (j, p) in t.leaves().iter().enumerate() {
            assert_eq!(*p, LeafPayload::Class(j));
        }
        assert!(build_class_subtree(1).is_err());
    }

    #[test]
    fn class_subtree_deeper_leaves_leftmost() {
        for c in 2..=33 {
            let t = build_class_subtree(c).unwrap();
            let d = class_subtree_height(c);
            let depths = leaf_depths(&t);
            assert_eq!(t.height(), d, "classes {c}");
            assert!(
                depths.iter().all(|&x| x == d || x + 1 == d),
                "classes {c}: {depths:?}"
            );
            assert!(
                depths.windows(2).all(|w| w[0] >= w[1]),
                "classes {c}: {depths:?}"
            );
            assert_eq!(t.num_leaves(), c);
        }
    }

    #[test]
    fn graft_examples() {
        let t = graft_classifier(2, 3).unwrap();
        assert_eq!(t, build_class_subtree(3).unwrap());

        let t = graft_classifier(3, 2).unwrap();
        assert_eq!(t.num_leaves(), 8);
        let classes: Vec<_> = t
            .leaves()
            .iter()
            .map(|p| match p {
                LeafPayload::Class(c) => *c,
                _ => panic!(),
            })
            .collect();
        assert_eq!(classes, vec![0, 1, 0, 1, 0, 1, 0, 1]);

        assert!(graft_classifier(1, 3).is_err());
    }

    #[test]
    fn graft_height4_four_classes_by_traversal() {
        // Count leaves and classes by walking the child graph from the root.
        let t = graft_classifier(4, 4).unwrap();
        let mut counts = [0usize; 4];
        let mut seen = 0;
        let mut stack = vec![t.root()];
        while let Some(n) = stack.pop() {
            match n {
                NodeRef::Leaf(j) => {
                    seen += 1;
                    if let LeafPayload::Class(c) = t.leaves()[j] {
                        counts[c] += 1;
                    }
                }
                NodeRef::Internal(i) => {
                    stack.push(t.internal_nodes()[i].left);
                    stack.push(t.internal_nodes()[i].right);
                }
            }
        }
        assert_eq!(seen, 16);
        assert_eq!(counts, [4, 4, 4, 4]);
    }

    #[test]
    fn leaf_decisions_five_leaf_tree() {
        let t = five_leaf_tree();
        use Sign::*;
        let d = |node, sign| SignedDecision { node, sign };
        // T5 is leaf id 1.
        assert_eq!(
            t.leaf_decisions(1).unwrap(),
            &vec![d(0, Negative), d(1, Negative), d(3, Positive)]
        );
        // T8 is leaf id 4.
        assert_eq!(
            t.leaf_decisions(4).unwrap(),
            &vec![d(0, Positive), d(2, Positive)]
        );
        assert!(t.leaf_decisions(5).is_err());

        let t = build_balanced(1).unwrap();
        assert_eq!(t.leaf_decisions(1).unwrap(), &vec![d(0, Positive)]);
    }

    #[test]
    fn traverse_boundary_goes_left() {
        let t = build_balanced(1).unwrap();
        let p = DecisionParams::new(Matrix::from_rows(&[vec![1.0]]).unwrap(), vec![0.0]).unwrap();
        assert_eq!(t.traverse(&p, &[2.0]).unwrap(), 1);
        assert_eq!(t.traverse(&p, &[0.0]).unwrap(), 0);
        assert_eq!(t.traverse(&p, &[-0.0]).unwrap(), 0);
        assert!(matches!(
            t.traverse(&p, &[1.0, 2.0]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn predict_class_and_regression() {
        let p = DecisionParams::new(Matrix::from_rows(&[vec![1.0]]).unwrap(), vec![0.0]).unwrap();
        let t = build_balanced(1)
            .unwrap()
            .with_payloads(vec![LeafPayload::Class(0), LeafPayload::Class(1)])
            .unwrap();
        assert_eq!(t.predict(&p, None, &[2.0]).unwrap(), Prediction::Class(1));

        let t = build_balanced(1).unwrap().with_regressor_payloads();
        let mut regs = LeafRegressors::zeros(2, 1, 1);
        regs.blocks[0].row_mut(1).copy_from_slice(&[-1.0, 1.0]);
        assert_eq!(
            t.predict(&p, Some(&regs), &[2.0]).unwrap(),
            Prediction::Values(vec![-1.0])
        );

        let unset = build_balanced(1).unwrap();
        assert!(matches!(
            unset.predict(&p, None, &[2.0]),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn rejects_malformed_graphs() {
        use NodeRef::*;
        // Identical children.
        let bad = vec![InternalNode {
            left: Leaf(0),
            right: Leaf(0),
        }];
        assert!(TreeStructure::new(bad, vec![LeafPayload::Unset; 2], Internal(0)).is_err());
        // Cycle: 0 -> 1 -> 0.
        let bad = vec![
            InternalNode {
                left: Internal(1),
                right: Leaf(0),
            },
            InternalNode {
                left: Internal(0),
                right: Leaf(1),
            },
        ];
        assert!(TreeStructure::new(bad, vec![LeafPayload::Unset; 3], Internal(0)).is_err());
        // Wrong leaf count.
        let bad = vec![InternalNode {
            left: Leaf(0),
            right: Leaf(1),
        }];
        assert!(TreeStructure::new(bad, vec![LeafPayload::Unset; 3], Internal(0)).is_err());
    }

    #[test]
    fn two_leaf_piecewise_linear_regressor() {
        // y = x for x <= 0.5, y = -2x + 2 otherwise; the split is x - 0.5 > 0.
        let t = build_balanced(1).unwrap().with_regressor_payloads();
        let p = DecisionParams::new(Matrix::from_rows(&[vec![1.0]]).unwrap(), vec![-0.5]).unwrap();
        let mut regs = LeafRegressors::zeros(2, 1, 1);
        regs.blocks[0].row_mut(0).copy_from_slice(&[1.0, 0.0]);
        regs.blocks[0].row_mut(1).copy_from_slice(&[-2.0, 2.0]);
        for i in 0..100 {
            let x = -2.0 + 4.0 * i as f64 / 99.0;
            let closed = if x <= 0.5 { x } else { -2.0 * x + 2.0 };
            assert_eq!(
                t.predict(&p, Some(&regs), &[x]).unwrap(),
                Prediction::Values(vec![closed])
            );
        }
    }
}
