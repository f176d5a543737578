//! The three training objectives, once over plain score tensors (padded
//! batches, evaluation) and once on the tape (training).

use serde::{Deserialize, Serialize};

use crate::data::EncodedSample;
use crate::error::{Error, Result};
use crate::model::Forward;
use crate::numerics::ops::log_softmax;
use crate::numerics::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.1,
            lambda2: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss.{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub tag: f64,
    pub edge: f64,
    pub rel: f64,
}

impl LossParts {
    pub fn total(&self, w: LossWeights) -> f64 {
        total_loss(*self, w)
    }

    pub fn add(&mut self, other: LossParts) {
        self.tag += other.tag;
        self.edge += other.edge;
        self.rel += other.rel;
    }

    pub fn scaled(self, k: f64) -> LossParts {
        LossParts {
            tag: k * self.tag,
            edge: k * self.edge,
            rel: k * self.rel,
        }
    }
}

/// `lambda1 * tag + lambda2 * (edge + rel)`.
pub fn total_loss(parts: LossParts, w: LossWeights) -> f64 {
    w.lambda1 * parts.tag + w.lambda2 * (parts.edge + parts.rel)
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Dimension(format!("{what}: expected {want}, got {got}")));
    }
    Ok(())
}

/// Mean cross-entropy over the unmasked words. `logits` is `L x |T|`.
pub fn tag_loss(logits: &Tensor, gold: &[usize], mask: &[bool]) -> Result<f64> {
    let (rows, _) = logits.require_2d()?;
    check_len("gold tags", gold.len(), rows)?;
    check_len("mask", mask.len(), rows)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in (0..rows).filter(|&i| mask[i]) {
        sum -= log_softmax(logits.row(i))[gold[i]];
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Summed cross-entropy of each unmasked word's gold head. `s_edge` is
/// `(L+1) x (L+1)` (row/column 0 is ROOT); padded heads are excluded from
/// every softmax.
pub fn edge_loss(s_edge: &Tensor, gold_heads: &[usize], mask: &[bool]) -> Result<f64> {
    let (rows, cols) = s_edge.require_2d()?;
    check_len("edge score rows", rows, mask.len() + 1)?;
    check_len("edge score columns", cols, rows)?;
    check_len("gold heads", gold_heads.len(), mask.len())?;
    let candidates: Vec<usize> = (0..cols).filter(|&j| j == 0 || mask[j - 1]).collect();
    let mut sum = 0.0;
    for i in (0..mask.len()).filter(|&i| mask[i]) {
        let row = s_edge.row(i + 1);
        let scores: Vec<f64> = candidates.iter().map(|&j| row[j]).collect();
        let pos = candidates
            .iter()
            .position(|&j| j == gold_heads[i])
            .ok_or_else(|| Error::Validation(format!("gold head {} of word {} is padding", gold_heads[i], i + 1)))?;
        sum -= log_softmax(&scores)[pos];
    }
    Ok(sum)
}

/// Summed cross-entropy of each unmasked word's relation at its gold head.
/// `s_rel` is `[L, L+1, |R|]`.
pub fn relation_loss(s_rel: &Tensor, gold_heads: &[usize], gold_rels: &[usize], mask: &[bool]) -> Result<f64> {
    let shape = s_rel.shape();
    if shape.len() != 3 || shape[0] != mask.len() || shape[1] != mask.len() + 1 {
        return Err(Error::Dimension(format!(
            "relation scores {shape:?} for {} positions",
            mask.len()
        )));
    }
    check_len("gold heads", gold_heads.len(), mask.len())?;
    check_len("gold relations", gold_rels.len(), mask.len())?;
    let (n1, r) = (shape[1], shape[2]);
    let mut sum = 0.0;
    for i in (0..mask.len()).filter(|&i| mask[i]) {
        let start = (i * n1 + gold_heads[i]) * r;
        sum -= log_softmax(&s_rel.data()[start..start + r])[gold_rels[i]];
    }
    Ok(sum)
}

/// Unpadded per-sentence loss parts from detached scores.
pub fn sample_loss(
    tag_logits: Option<&Tensor>,
    s_edge: &Tensor,
    s_rel: &Tensor,
    gold: &EncodedSample,
) -> Result<LossParts> {
    let mask = vec![true; gold.len()];
    Ok(LossParts {
        tag: match tag_logits {
            Some(t) => tag_loss(t, &gold.tags, &mask)?,
            None => 0.0,
        },
        edge: edge_loss(s_edge, &gold.heads, &mask)?,
        rel: relation_loss(s_rel, &gold.heads, &gold.rels, &mask)?,
    })
}

/// Records the weighted loss of one sentence on `tape` and returns its
/// root together with the unweighted parts. Without tag logits (oracle
/// tags) the tag term is absent.
pub fn tape_loss(tape: &mut Tape<'_>, f: &Forward, gold: &EncodedSample, w: LossWeights) -> (Var, LossParts) {
    let n = gold.len();
    let mut parts = LossParts::default();
    let mut terms = Vec::new();

    if let Some(logits) = f.tag_logits {
        let lp = tape.log_softmax_rows(logits, None);
        let picked: Vec<(usize, usize)> = gold.tags.iter().copied().enumerate().collect();
        let g = tape.gather_entries(lp, &picked);
        let s = tape.sum(g);
        let l = tape.scale(s, -1.0 / n as f64);
        parts.tag = tape.scalar(l);
        if w.lambda1 != 0.0 {
            terms.push(tape.scale(l, w.lambda1));
        }
    }

    let words: Vec<usize> = (1..=n).collect();
    let rows = tape.gather_rows(f.s_edge, &words);
    let lp = tape.log_softmax_rows(rows, None);
    let picked: Vec<(usize, usize)> = gold.heads.iter().copied().enumerate().collect();
    let g = tape.gather_entries(lp, &picked);
    let s = tape.sum(g);
    let edge = tape.scale(s, -1.0);
    parts.edge = tape.scalar(edge);

    let r = tape.dims(f.s_rel).1 / (n + 1);
    let blocks: Vec<(usize, usize)> = gold.heads.iter().enumerate().map(|(i, &h)| (i, h * r)).collect();
    let at_gold = tape.gather_blocks(f.s_rel, &blocks, r);
    let lp = tape.log_softmax_rows(at_gold, None);
    let picked: Vec<(usize, usize)> = gold.rels.iter().copied().enumerate().collect();
    let g = tape.gather_entries(lp, &picked);
    let s = tape.sum(g);
    let rel = tape.scale(s, -1.0);
    parts.rel = tape.scalar(rel);

    let parser = tape.add(edge, rel);
    terms.push(tape.scale(parser, w.lambda2));
    let mut root = terms[0];
    for &t in &terms[1..] {
        root = tape.add(root, t);
    }
    (root, parts)
}
