//! Micro-F1, attachment scores, seed aggregation and the signed-rank test.

mod wilcoxon;

pub use wilcoxon::{average_ranks, wilcoxon_one_tailed, WilcoxonResult, EXACT_LIMIT};

use std::collections::HashSet;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::data::EncodedSample;
use crate::decode::DecodedGraph;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn of<T: Eq + Hash>(pred: &[T], gold: &[T]) -> Counts {
        let p: HashSet<&T> = pred.iter().collect();
        let g: HashSet<&T> = gold.iter().collect();
        let tp = p.intersection(&g).count();
        Counts {
            tp,
            fp: p.len() - tp,
            fn_: g.len() - tp,
        }
    }

    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    /// `2TP / (2TP + FP + FN)`, with nothing predicted and nothing gold
    /// counted as perfect.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

pub fn micro_f1<T: Eq + Hash>(pred: &[T], gold: &[T]) -> f64 {
    Counts::of(pred, gold).f1()
}

/// `(UAS, LAS)` for one sentence.
pub fn attachment_scores(
    pred_heads: &[usize],
    pred_rels: &[usize],
    gold_heads: &[usize],
    gold_rels: &[usize],
) -> Result<(f64, f64)> {
    let n = gold_heads.len();
    if pred_heads.len() != n || pred_rels.len() != n || gold_rels.len() != n {
        return Err(Error::Dimension(format!(
            "attachment scores over {} predicted and {} gold words",
            pred_heads.len(),
            n
        )));
    }
    if n == 0 {
        return Ok((1.0, 1.0));
    }
    let (u, l) = attachment_counts(pred_heads, pred_rels, gold_heads, gold_rels);
    Ok((u as f64 / n as f64, l as f64 / n as f64))
}

fn attachment_counts(ph: &[usize], pr: &[usize], gh: &[usize], gr: &[usize]) -> (usize, usize) {
    let mut u = 0;
    let mut l = 0;
    for i in 0..gh.len() {
        if ph[i] == gh[i] {
            u += 1;
            if pr[i] == gr[i] {
                l += 1;
            }
        }
    }
    (u, l)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub f1_tags: f64,
    pub f1_unlabeled: f64,
    pub f1_labeled: f64,
    pub uas: f64,
    pub las: f64,
    pub tags: Counts,
    pub unlabeled: Counts,
    pub labeled: Counts,
    pub words: usize,
    pub samples: usize,
}

/// Pooled metrics over a corpus. Edges labelled `none_relation` are not
/// items on either side (they stand for "no incoming edge").
pub fn evaluate(gold: &[EncodedSample], pred: &[DecodedGraph], none_relation: Option<usize>) -> Result<MetricsReport> {
    if gold.len() != pred.len() {
        return Err(Error::Dimension(format!(
            "{} gold samples, {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    let mut r = MetricsReport {
        samples: gold.len(),
        ..Default::default()
    };
    let mut uas = 0;
    let mut las = 0;
    let keep = |e: &&(usize, usize, usize)| Some(e.2) != none_relation;
    for (g, p) in gold.iter().zip(pred) {
        if p.heads.len() != g.len() {
            return Err(Error::Dimension(format!(
                "prediction has {} words, gold has {}",
                p.heads.len(),
                g.len()
            )));
        }
        r.words += g.len();
        let (u, l) = attachment_counts(&p.heads, &p.relations, &g.heads, &g.rels);
        uas += u;
        las += l;
        let gt: Vec<(usize, usize)> = g.tags.iter().copied().enumerate().collect();
        let pt: Vec<(usize, usize)> = p.tags.iter().copied().enumerate().collect();
        r.tags.add(Counts::of(&pt, &gt));
        let gl: Vec<_> = g.edges.iter().filter(keep).copied().collect();
        let pl: Vec<_> = p.edges.iter().filter(keep).copied().collect();
        r.labeled.add(Counts::of(&pl, &gl));
        let gu: Vec<_> = gl.iter().map(|e| (e.0, e.1)).collect();
        let pu: Vec<_> = pl.iter().map(|e| (e.0, e.1)).collect();
        r.unlabeled.add(Counts::of(&pu, &gu));
    }
    let words = r.words.max(1) as f64;
    r.uas = uas as f64 / words;
    r.las = las as f64 / words;
    r.f1_tags = r.tags.f1();
    r.f1_unlabeled = r.unlabeled.f1();
    r.f1_labeled = r.labeled.f1();
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAggregate {
    pub seeds: Vec<u64>,
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Mean and standard deviation over per-seed values; population form
/// unless `sample_std`.
pub fn aggregate_seeds(seeds: &[u64], values: &[f64], sample_std: bool) -> Result<SeedAggregate> {
    if values.len() < 2 || seeds.len() != values.len() {
        return Err(Error::Parameter(format!(
            "need at least two seeds with one value each, got {} seeds and {} values",
            seeds.len(),
            values.len()
        )));
    }
    let n = values.len() as f64;
    let shift = values[0];
    let mean = shift + values.iter().map(|v| v - shift).sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let std = (ss / if sample_std { n - 1.0 } else { n }).sqrt();
    Ok(SeedAggregate {
        seeds: seeds.to_vec(),
        values: values.to_vec(),
        mean,
        std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;

    #[test]
    fn f1_examples() {
        assert_eq!(micro_f1(&[1, 2], &[1, 2]), 1.0);
        assert_eq!(micro_f1(&[1, 2], &[3, 4]), 0.0);
        assert_eq!(micro_f1::<u8>(&[], &[]), 1.0);
        let c = Counts::of(&[1, 2, 3], &[1, 2, 4]);
        assert_eq!((c.tp, c.fp, c.fn_), (2, 1, 1));
        assert!((c.f1() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn attachment_example() {
        let (u, l) = attachment_scores(&[2, 0, 2, 3], &[1, 0, 5, 2], &[2, 0, 2, 1], &[1, 0, 4, 2]).unwrap();
        assert_eq!((u, l), (0.75, 0.5));
        assert_eq!(attachment_scores(&[0], &[1], &[0], &[1]).unwrap(), (1.0, 1.0));
        assert!(attachment_scores(&[0], &[1], &[0, 1], &[1, 1]).is_err());
    }

    #[test]
    fn las_never_exceeds_uas() {
        let mut rng = SeededRng::new(4);
        for _ in 0..1000 {
            let n = 1 + rng.below(8);
            let mut draw = |k: usize| (0..n).map(|_| rng.below(k)).collect::<Vec<_>>();
            let (ph, pr, gh, gr) = (draw(n + 1), draw(3), draw(n + 1), draw(3));
            let (u, l) = attachment_scores(&ph, &pr, &gh, &gr).unwrap();
            assert!(l <= u);
        }
    }

    #[test]
    fn aggregate_examples() {
        let a = aggregate_seeds(&[1, 2, 3], &[0.7; 3], false).unwrap();
        assert_eq!(a.std, 0.0);
        let b = aggregate_seeds(&[1, 2], &[0.0, 1.0], false).unwrap();
        assert_eq!((b.mean, b.std), (0.5, 0.5));
        let vals = [2.0, 4.0, 4.0, 4.0, 6.0];
        let c = aggregate_seeds(&[1, 2, 3, 4, 5], &vals, false).unwrap();
        assert_eq!(c.mean, 4.0);
        assert!((c.std - 1.6f64.sqrt()).abs() < 1e-15);
        let s = aggregate_seeds(&[1, 2, 3, 4, 5], &vals, true).unwrap();
        assert!((s.std - 2f64.sqrt()).abs() < 1e-15);
        assert!(aggregate_seeds(&[1], &[1.0], false).is_err());
    }
}
