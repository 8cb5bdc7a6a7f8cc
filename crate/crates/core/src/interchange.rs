//! JSON interchange format for decoded oblique trees.
//!
//! ```json
//! {"n": 2, "task": "classification",
//!  "nodes": [{"id": 0, "weights": [1.0, -0.5], "bias": 0.1, "left": 1, "right": 2}],
//!  "leaves": [{"id": 1, "class": 0}, {"id": 2, "class": 1}]}
//! ```
//!
//! Node and leaf ids share one namespace; the root is the only id that is
//! nobody's child. Regression leaves carry `theta` and `alpha` instead of
//! `class` (arrays of those for multi-output trees).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::Standardizer;
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::semnet::Task;
use crate::tree::{
    DecisionParams, InternalNode, LeafPayload, LeafRegressors, NodeRef, TreeStructure,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSpace {
    Standardized,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeDocument {
    pub n: usize,
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_space: Option<FeatureSpace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
    /// Hash of the run configuration that produced the tree.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub nodes: Vec<NodeDoc>,
    pub leaves: Vec<LeafDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDoc {
    pub id: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub left: usize,
    pub right: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v],
            OneOrMany::Many(v) => v,
        }
    }

    fn from_vec(mut v: Vec<T>) -> Self {
        if v.len() == 1 {
            OneOrMany::One(v.remove(0))
        } else {
            OneOrMany::Many(v)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeafDoc {
    pub id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<OneOrMany<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<OneOrMany<f64>>,
}

/// A tree with everything needed to predict.
#[derive(Debug, Clone)]
pub struct TreeModel {
    pub tree: TreeStructure,
    pub params: DecisionParams,
    pub regressors: Option<LeafRegressors>,
    pub task: Task,
}

impl TreeModel {
    pub fn predict(&self, x: &[f64]) -> Result<crate::tree::Prediction> {
        self.tree.predict(&self.params, self.regressors.as_ref(), x)
    }
}

impl TreeDocument {
    pub fn from_model(model: &TreeModel) -> Result<Self> {
        let tree = &model.tree;
        let k = tree.num_internal();
        let id_of = |r: NodeRef| match r {
            NodeRef::Internal(i) => i,
            NodeRef::Leaf(j) => k + j,
        };
        let w = model.params.weights();
        let nodes = tree
            .internal_nodes()
            .iter()
            .enumerate()
            .map(|(i, node)| NodeDoc {
                id: i,
                weights: w.row(i).to_vec(),
                bias: model.params.biases()[i],
                left: id_of(node.left),
                right: id_of(node.right),
            })
            .collect();
        let leaves = tree
            .leaves()
            .iter()
            .enumerate()
            .map(|(j, payload)| match (model.task, payload) {
                (Task::Classification, LeafPayload::Class(c)) => Ok(LeafDoc {
                    id: k + j,
                    class: Some(*c),
                    theta: None,
                    alpha: None,
                }),
                (Task::Regression, LeafPayload::Regressor(r)) => {
                    let regs = model.regressors.as_ref().ok_or_else(|| {
                        Error::InvalidState("regression tree without regressors".into())
                    })?;
                    let n = model.params.dim();
                    Ok(LeafDoc {
                        id: k + j,
                        class: None,
                        theta: Some(OneOrMany::from_vec(
                            regs.blocks
                                .iter()
                                .map(|b| b.row(*r)[..n].to_vec())
                                .collect(),
                        )),
                        alpha: Some(OneOrMany::from_vec(
                            regs.blocks.iter().map(|b| b.row(*r)[n]).collect(),
                        )),
                    })
                }
                _ => Err(Error::InvalidState(format!(
                    "leaf {j} payload does not match the task"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n: model.params.dim(),
            task: model.task,
            feature_space: None,
            class_names: None,
            config_hash: None,
            seed: None,
            nodes,
            leaves,
        })
    }

    pub fn to_model(&self) -> Result<TreeModel> {
        if self.n == 0 {
            return Err(Error::invalid("tree dimension must be at least 1"));
        }
        let mut refs: HashMap<usize, NodeRef> = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if refs.insert(node.id, NodeRef::Internal(i)).is_some() {
                return Err(Error::invalid(format!("duplicate id {}", node.id)));
            }
            if node.weights.len() != self.n {
                return Err(Error::invalid(format!(
                    "node {} has {} weights, expected {}",
                    node.id,
                    node.weights.len(),
                    self.n
                )));
            }
            if !node.bias.is_finite() || node.weights.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "node {} has non-finite parameters",
                    node.id
                )));
            }
        }
        for (j, leaf) in self.leaves.iter().enumerate() {
            if refs.insert(leaf.id, NodeRef::Leaf(j)).is_some() {
                return Err(Error::invalid(format!("duplicate id {}", leaf.id)));
            }
        }
        let resolve = |id: usize| {
            refs.get(&id)
                .copied()
                .ok_or_else(|| Error::invalid(format!("unknown child id {id}")))
        };
        let internal = self
            .nodes
            .iter()
            .map(|n| {
                Ok(InternalNode {
                    left: resolve(n.left)?,
                    right: resolve(n.right)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let children: std::collections::HashSet<usize> =
            self.nodes.iter().flat_map(|n| [n.left, n.right]).collect();
        let roots: Vec<usize> = self
            .nodes
            .iter()
            .map(|n| n.id)
            .filter(|id| !children.contains(id))
            .collect();
        let root = match roots.as_slice() {
            [r] => refs[r],
            _ => {
                return Err(Error::invalid(format!(
                    "expected exactly one root, found {}",
                    roots.len()
                )))
            }
        };

        let (payloads, regressors) = match self.task {
            Task::Classification => {
                let payloads = self
                    .leaves
                    .iter()
                    .map(|l| match (l.class, &l.theta, &l.alpha) {
                        (Some(c), None, None) => Ok(LeafPayload::Class(c)),
                        _ => Err(Error::invalid(format!(
                            "leaf {} needs exactly a class",
                            l.id
                        ))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                (payloads, None)
            }
            Task::Regression => {
                let mut per_leaf = Vec::with_capacity(self.leaves.len());
                for l in &self.leaves {
                    let (Some(theta), Some(alpha), None) = (&l.theta, &l.alpha, l.class) else {
                        return Err(Error::invalid(format!(
                            "leaf {} needs theta and alpha",
                            l.id
                        )));
                    };
                    let theta = theta.clone().into_vec();
                    let alpha = alpha.clone().into_vec();
                    if theta.is_empty()
                        || theta.len() != alpha.len()
                        || theta.iter().any(|t| t.len() != self.n)
                    {
                        return Err(Error::invalid(format!(
                            "leaf {} regressor shapes are inconsistent",
                            l.id
                        )));
                    }
                    if theta.iter().flatten().chain(&alpha).any(|v| !v.is_finite()) {
                        return Err(Error::invalid(format!(
                            "leaf {} has non-finite parameters",
                            l.id
                        )));
                    }
                    per_leaf.push((theta, alpha));
                }
                let outputs = per_leaf.first().map_or(1, |(t, _)| t.len());
                if per_leaf.iter().any(|(t, _)| t.len() != outputs) {
                    return Err(Error::invalid("leaves disagree on the number of outputs"));
                }
                let mut regs = LeafRegressors::zeros(self.leaves.len(), self.n, outputs);
                for (j, (theta, alpha)) in per_leaf.iter().enumerate() {
                    for d in 0..outputs {
                        let row = regs.blocks[d].row_mut(j);
                        row[..self.n].copy_from_slice(&theta[d]);
                        row[self.n] = alpha[d];
                    }
                }
                (vec![LeafPayload::Unset; self.leaves.len()], Some(regs))
            }
        };

        let tree = TreeStructure::new(internal, payloads, root)?;
        let tree = match self.task {
            Task::Regression => tree.with_regressor_payloads(),
            Task::Classification => tree,
        };
        let weights = Matrix::from_rows(
            &self
                .nodes
                .iter()
                .map(|n| n.weights.clone())
                .collect::<Vec<_>>(),
        )?;
        let params = DecisionParams::new(weights, self.nodes.iter().map(|n| n.bias).collect())?;
        Ok(TreeModel {
            tree,
            params,
            regressors,
            task: self.task,
        })
    }

    /// Rewrites the tree to act on raw features (and, for regression, to
    /// predict raw targets): `A' = A/σ`, `b' = b − Σ A_k μ_k/σ_k`.
    pub fn destandardize(&self, s: &Standardizer) -> Result<Self> {
        s.validate()?;
        if s.dim() != self.n {
            return Err(Error::invalid(format!(
                "standardizer has {} features, tree has {}",
                s.dim(),
                self.n
            )));
        }
        if self.feature_space == Some(FeatureSpace::Raw) {
            return Err(Error::invalid("tree is already in raw feature units"));
        }
        let rescale = |w: &[f64], b: f64| -> (Vec<f64>, f64) {
            let scaled: Vec<f64> = w.iter().zip(&s.stds).map(|(w, sd)| w / sd).collect();
            let shift = dot(&scaled, &s.means);
            (scaled, b - shift)
        };
        let mut out = self.clone();
        out.feature_space = Some(FeatureSpace::Raw);
        for node in &mut out.nodes {
            let (w, b) = rescale(&node.weights, node.bias);
            node.weights = w;
            node.bias = b;
        }
        if self.task == Task::Regression {
            let (Some(tm), Some(ts)) = (&s.target_mean, &s.target_std) else {
                return Err(Error::invalid("standardizer has no target statistics"));
            };
            for leaf in &mut out.leaves {
                let (Some(theta), Some(alpha)) = (leaf.theta.clone(), leaf.alpha.clone()) else {
                    return Err(Error::invalid(format!(
                        "leaf {} needs theta and alpha",
                        leaf.id
                    )));
                };
                let theta = theta.into_vec();
                let alpha = alpha.into_vec();
                if theta.len() != tm.len() || alpha.len() != tm.len() {
                    return Err(Error::invalid("standardizer and tree disagree on outputs"));
                }
                let mut new_theta = Vec::with_capacity(theta.len());
                let mut new_alpha = Vec::with_capacity(alpha.len());
                for d in 0..theta.len() {
                    let (w, b) = rescale(&theta[d], alpha[d]);
                    new_theta.push(w.iter().map(|v| v * ts[d]).collect());
                    new_alpha.push(b * ts[d] + tm[d]);
                }
                leaf.theta = Some(OneOrMany::from_vec(new_theta));
                leaf.alpha = Some(OneOrMany::from_vec(new_alpha));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{build_balanced, graft_classifier, Prediction};

    fn dyadic_model(task: Task) -> TreeModel {
        let tree = match task {
            Task::Classification => graft_classifier(2, 3).unwrap(),
            Task::Regression => build_balanced(2).unwrap().with_regressor_payloads(),
        };
        let k = tree.num_internal();
        let w: Vec<Vec<f64>> = (0..k).map(|i| vec![0.5 * i as f64 - 0.75, 0.25]).collect();
        let params = DecisionParams::new(
            Matrix::from_rows(&w).unwrap(),
            (0..k).map(|i| 0.125 * i as f64).collect(),
        )
        .unwrap();
        let regressors = (task == Task::Regression).then(|| {
            let mut r = LeafRegressors::zeros(tree.num_leaves(), 2, 2);
            for (d, b) in r.blocks.iter_mut().enumerate() {
                for j in 0..b.rows() {
                    b.row_mut(j)
                        .copy_from_slice(&[j as f64, -(d as f64), 0.5 * j as f64]);
                }
            }
            r
        });
        TreeModel {
            tree,
            params,
            regressors,
            task,
        }
    }

    #[test]
    fn roundtrip_classification() {
        let m = dyadic_model(Task::Classification);
        let doc = TreeDocument::from_model(&m).unwrap();
        assert_eq!(doc.nodes[0].id, 0);
        let json = serde_json::to_string(&doc).unwrap();
        let back: TreeDocument = serde_json::from_str(&json).unwrap();
        assert_eq!(back, doc);
        let m2 = back.to_model().unwrap();
        for x in [[0.3, -1.0], [-2.0, 2.0], [1.0, 1.0], [0.0, 0.0]] {
            assert_eq!(m.predict(&x).unwrap(), m2.predict(&x).unwrap());
        }
    }

    #[test]
    fn roundtrip_multi_output_regression() {
        let m = dyadic_model(Task::Regression);
        let doc = TreeDocument::from_model(&m).unwrap();
        assert!(matches!(doc.leaves[0].theta, Some(OneOrMany::Many(_))));
        let m2 = doc.to_model().unwrap();
        let x = [0.7, -0.2];
        assert_eq!(m.predict(&x).unwrap(), m2.predict(&x).unwrap());
    }

    #[test]
    fn single_output_uses_flat_arrays() {
        let json = r#"{"n":1,"task":"regression",
            "nodes":[{"id":5,"weights":[1.0],"bias":0.0,"left":7,"right":9}],
            "leaves":[{"id":7,"theta":[1.0],"alpha":0.0},{"id":9,"theta":[-2.0],"alpha":1.0}]}"#;
        let doc: TreeDocument = serde_json::from_str(json).unwrap();
        let m = doc.to_model().unwrap();
        assert_eq!(m.predict(&[-1.0]).unwrap(), Prediction::Values(vec![-1.0]));
        assert_eq!(m.predict(&[2.0]).unwrap(), Prediction::Values(vec![-3.0]));
        let again = TreeDocument::from_model(&m).unwrap();
        assert!(matches!(again.leaves[0].alpha, Some(OneOrMany::One(_))));
    }

    #[test]
    fn malformed_documents() {
        let base = TreeDocument::from_model(&dyadic_model(Task::Classification)).unwrap();
        let mut d = base.clone();
        d.nodes[1].left = 99;
        assert!(d.to_model().is_err());
        let mut d = base.clone();
        d.nodes[0].weights.pop();
        assert!(d.to_model().is_err());
        let mut d = base.clone();
        d.leaves[0].class = None;
        assert!(d.to_model().is_err());
        let mut d = base;
        d.leaves[1].id = d.leaves[0].id;
        assert!(d.to_model().is_err());
        assert!(serde_json::from_str::<TreeDocument>(
            r#"{"n":1,"task":"classification","nodes":[],"leaves":[],"x":1}"#
        )
        .is_err());
    }

    #[test]
    fn destandardize_matches_standardized_inputs() {
        let s = Standardizer {
            means: vec![3.0, -1.0],
            stds: vec![2.0, 0.5],
            target_mean: Some(vec![10.0, 0.0]),
            target_std: Some(vec![4.0, 1.0]),
        };
        for task in [Task::Classification, Task::Regression] {
            let m = dyadic_model(task);
            let doc = TreeDocument::from_model(&m).unwrap();
            let raw = doc.destandardize(&s).unwrap().to_model().unwrap();
            for x in [[5.0, -2.0], [1.0, 0.0], [3.3, -1.1]] {
                let z = s.transform_row(&x);
                match (m.predict(&z).unwrap(), raw.predict(&x).unwrap()) {
                    (Prediction::Class(a), Prediction::Class(b)) => assert_eq!(a, b),
                    (Prediction::Values(a), Prediction::Values(b)) => {
                        let a = s.inverse_target(&a);
                        for (u, v) in a.iter().zip(&b) {
                            assert!((u - v).abs() < 1e-12);
                        }
                    }
                    _ => panic!("prediction kinds differ"),
                }
            }
        }
    }
}
