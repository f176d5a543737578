//! Turning score sets into dependency structures.

mod mst;

pub use mst::{brute_force_arborescence, max_arborescence, total_score};

use serde::{Deserialize, Serialize};

use crate::model::{argmax, ScoreSet};
use crate::numerics::ops::log_softmax;
use crate::numerics::tape::sigmoid;
use crate::numerics::Tensor;

pub const DEFAULT_TAU: f64 = 10.0;
pub const DEFAULT_SIGMOID_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    Greedy,
    #[default]
    Mst,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Validity {
    /// Exactly one word hangs off ROOT.
    pub single_root: bool,
    /// Following heads from any word never revisits a word.
    pub acyclic: bool,
    /// Every word reaches ROOT and no word heads itself.
    pub connected: bool,
}

impl Validity {
    pub fn is_valid(&self) -> bool {
        self.single_root && self.acyclic && self.connected
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedGraph {
    /// Head of each word (0 = ROOT); index `i` is word `i + 1`.
    pub heads: Vec<usize>,
    /// Relation of each word's edge to its head.
    pub relations: Vec<usize>,
    /// Predicted tag of each word.
    pub tags: Vec<usize>,
    /// Predicted edges `(dep, head, rel)`. In tree modes these mirror
    /// `heads`/`relations`; in sigmoid mode they are the thresholded set.
    pub edges: Vec<(usize, usize, usize)>,
    pub mode: DecodeMode,
    pub validity: Validity,
}

/// Checks the structure described by `heads` (index `i` = word `i + 1`).
pub fn validate_arborescence(heads: &[usize]) -> Validity {
    let n = heads.len();
    let single_root = heads.iter().filter(|&&h| h == 0).count() == 1;
    let no_self = heads.iter().enumerate().all(|(i, &h)| h != i + 1);
    let in_range = heads.iter().all(|&h| h <= n);
    let mut reaches_root = vec![false; n + 1];
    reaches_root[0] = true;
    let mut acyclic = in_range;
    if in_range {
        for start in 1..=n {
            let mut path = Vec::new();
            let mut v = start;
            let mut seen = vec![false; n + 1];
            while v != 0 && !reaches_root[v] {
                if seen[v] {
                    acyclic = false;
                    break;
                }
                seen[v] = true;
                path.push(v);
                v = heads[v - 1];
            }
            if reaches_root[v] {
                for u in path {
                    reaches_root[u] = true;
                }
            }
        }
    }
    Validity {
        single_root,
        acyclic,
        connected: in_range && no_self && reaches_root.iter().all(|&r| r),
    }
}

fn tree_graph(scores: &ScoreSet, heads: Vec<usize>, relations: Vec<usize>, mode: DecodeMode) -> DecodedGraph {
    let edges = heads
        .iter()
        .zip(&relations)
        .enumerate()
        .map(|(i, (&h, &r))| (i + 1, h, r))
        .collect();
    DecodedGraph {
        validity: validate_arborescence(&heads),
        heads,
        relations,
        tags: scores.tags.clone(),
        edges,
        mode,
    }
}

/// Row-wise argmax of `s_edge` over all `n + 1` candidate heads, then the
/// best relation at the chosen head.
pub fn greedy_decode(scores: &ScoreSet) -> DecodedGraph {
    let n = scores.words();
    let heads: Vec<usize> = (1..=n).map(|i| argmax(scores.s_edge.row(i))).collect();
    let relations = heads
        .iter()
        .enumerate()
        .map(|(i, &h)| argmax(scores.rel(i + 1, h)))
        .collect();
    tree_graph(scores, heads, relations, DecodeMode::Greedy)
}

/// Edge log-probabilities plus best-relation log-probabilities, both after
/// sharpening by `tau`. Row 0 is zero and unused.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyMatrix {
    pub energy: Tensor,
    pub best_relation: Vec<Vec<usize>>,
}

impl EnergyMatrix {
    pub fn rows(&self) -> Vec<Vec<f64>> {
        let n1 = self.energy.shape()[0];
        (0..n1).map(|i| self.energy.row(i).to_vec()).collect()
    }
}

pub fn build_energy(scores: &ScoreSet, tau: f64) -> EnergyMatrix {
    assert!(tau > 0.0, "tau must be positive");
    let n = scores.words();
    let n1 = n + 1;
    let mut energy = Tensor::zeros(&[n1, n1]);
    let mut best_relation = vec![vec![0; n1]; n1];
    for i in 1..=n {
        let edge: Vec<f64> = scores.s_edge.row(i).iter().map(|v| tau * v).collect();
        let edge = log_softmax(&edge);
        for j in 0..n1 {
            let rel = scores.rel(i, j);
            let best = argmax(rel);
            let sharpened: Vec<f64> = rel.iter().map(|v| tau * v).collect();
            energy.set(i, j, edge[j] + log_softmax(&sharpened)[best]);
            best_relation[i][j] = best;
        }
    }
    EnergyMatrix {
        energy,
        best_relation,
    }
}

/// Maximum spanning arborescence over the energies; see
/// [`max_arborescence`].
pub fn chu_liu_edmonds(scores: &ScoreSet, energy: &EnergyMatrix, single_root: bool) -> DecodedGraph {
    let n = scores.words();
    let full = max_arborescence(&energy.rows(), single_root);
    let heads = full[1..].to_vec();
    let relations = (1..=n).map(|i| energy.best_relation[i][full[i]]).collect();
    tree_graph(scores, heads, relations, DecodeMode::Mst)
}

/// Every `(i, j)` with `sigmoid(s_edge[i][j]) > threshold`, `i` a word.
pub fn sigmoid_edge_decode(s_edge: &Tensor, threshold: f64) -> Vec<(usize, usize)> {
    let n1 = s_edge.shape()[0];
    let mut out = Vec::new();
    for i in 1..n1 {
        for j in 0..n1 {
            if sigmoid(s_edge.at(i, j)) > threshold {
                out.push((i, j));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeOptions {
    pub mode: DecodeMode,
    pub tau: f64,
    pub single_root: bool,
    pub threshold: f64,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            mode: DecodeMode::Mst,
            tau: DEFAULT_TAU,
            single_root: true,
            threshold: DEFAULT_SIGMOID_THRESHOLD,
        }
    }
}

pub fn decode(scores: &ScoreSet, opts: &DecodeOptions) -> DecodedGraph {
    match opts.mode {
        DecodeMode::Greedy => greedy_decode(scores),
        DecodeMode::Mst => chu_liu_edmonds(scores, &build_energy(scores, opts.tau), opts.single_root),
        DecodeMode::Sigmoid => {
            let mut g = greedy_decode(scores);
            g.mode = DecodeMode::Sigmoid;
            g.edges = sigmoid_edge_decode(&scores.s_edge, opts.threshold)
                .into_iter()
                .map(|(i, j)| (i, j, argmax(scores.rel(i, j))))
                .collect();
            g
        }
    }
}

#[cfg(test)]
mod tests;
