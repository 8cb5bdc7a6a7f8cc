//! Randomized network-versus-tree agreement checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::semnet::{check_equivalence, SemNet};
use crate::tree::{DecisionParams, TreeStructure};

/// Half-width of the sampling box; features are standardized.
pub const BOX: f64 = 3.0;

#[derive(Debug, Clone, Serialize)]
pub struct EquivReport {
    pub samples: usize,
    pub boundary: usize,
    pub mismatches: usize,
}

pub fn sample_box<R: Rng + ?Sized>(dim: usize, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| (0..dim).map(|_| rng.gen_range(-BOX..=BOX)).collect())
        .collect()
}

/// For each hyperplane, `per_node` random box points projected onto it.
/// Nodes with an all-zero weight vector contribute nothing.
pub fn boundary_points<R: Rng + ?Sized>(
    params: &DecisionParams,
    per_node: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let w = params.weights();
    for i in 0..params.num_nodes() {
        let a = w.row(i);
        let norm2 = dot(a, a);
        if norm2 == 0.0 {
            continue;
        }
        for x in sample_box(params.dim(), per_node, rng) {
            let t = (dot(a, &x) + params.biases()[i]) / norm2;
            out.push(x.iter().zip(a).map(|(v, a)| v - t * a).collect());
        }
    }
    out
}

/// Compares `net` against `tree` with `params` (normally the net's own
/// decoding) on `samples` box points plus `per_node` boundary points per node.
pub fn run_equiv(
    net: &SemNet,
    tree: &TreeStructure,
    params: &DecisionParams,
    samples: usize,
    per_node: usize,
    seed: u64,
) -> Result<EquivReport> {
    if params.dim() != net.dim() {
        return Err(Error::invalid("tree and network dimensions differ"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = sample_box(net.dim(), samples, &mut rng);
    let boundary = boundary_points(params, per_node, &mut rng);
    let n_boundary = boundary.len();
    inputs.extend(boundary);
    let mut mismatches = 0;
    for chunk in inputs.chunks(1 << 14) {
        mismatches += check_equivalence(net, tree, params, chunk)?;
    }
    Ok(EquivReport {
        samples,
        boundary: n_boundary,
        mismatches,
    })
}
