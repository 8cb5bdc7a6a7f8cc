//! Versioned JSON weight checkpoints. Masks are rebuilt from the stored tree
//! and checked against `masks_hash`; they are never stored themselves.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::semnet::{SemNet, Task};
use crate::tree::{
    DecisionParams, InternalNode, LeafPayload, LeafRegressors, NodeRef, TreeStructure,
};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub task: Task,
    pub n: usize,
    pub outputs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
    pub tree: Skeleton,
    pub masks_hash: String,
    pub params: ParamsDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regressors: Option<Vec<Matrix>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overparam_chain: Option<Vec<Matrix>>,
}

/// Tree shape with ids `0..K` for internal nodes and `K..K+Λ` for leaves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Skeleton {
    pub root: usize,
    pub nodes: Vec<SkeletonNode>,
    pub leaves: Vec<SkeletonLeaf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonNode {
    pub id: usize,
    pub left: usize,
    pub right: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonLeaf {
    pub id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsDoc {
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

fn corrupt(msg: impl std::fmt::Display) -> Error {
    Error::CorruptCheckpoint(msg.to_string())
}

impl Skeleton {
    fn from_tree(tree: &TreeStructure) -> Self {
        let k = tree.num_internal();
        let id = |r: NodeRef| match r {
            NodeRef::Internal(i) => i,
            NodeRef::Leaf(j) => k + j,
        };
        Self {
            root: id(tree.root()),
            nodes: tree
                .internal_nodes()
                .iter()
                .enumerate()
                .map(|(i, n)| SkeletonNode {
                    id: i,
                    left: id(n.left),
                    right: id(n.right),
                })
                .collect(),
            leaves: tree
                .leaves()
                .iter()
                .enumerate()
                .map(|(j, p)| SkeletonLeaf {
                    id: k + j,
                    class: match p {
                        LeafPayload::Class(c) => Some(*c),
                        _ => None,
                    },
                })
                .collect(),
        }
    }

    fn to_tree(&self, task: Task) -> Result<TreeStructure> {
        let k = self.nodes.len();
        let total = k + self.leaves.len();
        let resolve = |id: usize| -> Result<NodeRef> {
            match id {
                i if i < k => Ok(NodeRef::Internal(i)),
                j if j < total => Ok(NodeRef::Leaf(j - k)),
                _ => Err(corrupt(format!("id {id} out of range"))),
            }
        };
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id != i {
                return Err(corrupt(format!("node at position {i} has id {}", n.id)));
            }
        }
        for (j, l) in self.leaves.iter().enumerate() {
            if l.id != k + j {
                return Err(corrupt(format!("leaf at position {j} has id {}", l.id)));
            }
        }
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
        let payloads = self
            .leaves
            .iter()
            .map(|l| match (task, l.class) {
                (Task::Classification, Some(c)) => Ok(LeafPayload::Class(c)),
                (Task::Regression, None) => Ok(LeafPayload::Unset),
                _ => Err(corrupt(format!(
                    "leaf {} payload does not match the task",
                    l.id
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        TreeStructure::new(internal, payloads, resolve(self.root)?).map_err(corrupt)
    }
}

impl Checkpoint {
    pub fn from_net(net: &SemNet, config_hash: &str, seed: u64) -> Self {
        let params = net.decision_params();
        Self {
            version: CHECKPOINT_VERSION,
            config_hash: config_hash.to_string(),
            seed,
            task: net.task(),
            n: net.dim(),
            outputs: net.outputs(),
            class_names: None,
            tree: Skeleton::from_tree(net.tree()),
            masks_hash: net.masks_hash(),
            params: ParamsDoc {
                weights: params.weights().clone(),
                biases: params.biases().to_vec(),
            },
            regressors: net.regressors().map(|r| r.blocks.clone()),
            overparam_chain: net.chain().map(<[Matrix]>::to_vec),
        }
    }

    /// Rebuilds the network. Any inconsistency, including a masks hash that
    /// does not match the rebuilt masks, is reported as a corrupt checkpoint.
    pub fn to_net(&self) -> Result<SemNet> {
        if self.version != CHECKPOINT_VERSION {
            return Err(corrupt(format!("unsupported version {}", self.version)));
        }
        let tree = self.tree.to_tree(self.task)?;
        let params = DecisionParams::new(self.params.weights.clone(), self.params.biases.clone())
            .map_err(corrupt)?;
        if params.dim() != self.n {
            return Err(corrupt(format!(
                "weights have {} columns, n is {}",
                params.dim(),
                self.n
            )));
        }
        if !params.weights().is_finite() || params.biases().iter().any(|b| !b.is_finite()) {
            return Err(corrupt("non-finite decision parameters"));
        }
        let regressors = match (self.task, &self.regressors) {
            (Task::Regression, Some(blocks))
                if blocks.len() == self.outputs && !blocks.is_empty() =>
            {
                if blocks.iter().any(|b| !b.is_finite()) {
                    return Err(corrupt("non-finite regressors"));
                }
                Some(LeafRegressors {
                    blocks: blocks.clone(),
                })
            }
            (Task::Classification, None) if self.outputs == 0 => None,
            _ => return Err(corrupt("regressors do not match the task and output count")),
        };
        let mut net = SemNet::from_parts(tree, &params, self.task, regressors).map_err(corrupt)?;
        if net.masks_hash() != self.masks_hash {
            return Err(corrupt("masks hash does not match the stored tree"));
        }
        if let Some(chain) = &self.overparam_chain {
            net.attach_chain(chain.clone()).map_err(corrupt)?;
            let folded = net.decisions();
            if folded.max_abs_diff(&params.to_affine()) > 1e-9 * (1.0 + folded.sum_squares().sqrt())
            {
                return Err(corrupt(
                    "factor chain does not fold to the stored parameters",
                ));
            }
        }
        Ok(net)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(corrupt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
