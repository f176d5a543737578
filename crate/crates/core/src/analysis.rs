//! Effective-rank traces, pre-softmax score variance, the `Var(q.k) = d`
//! law and a numerical check that output covariance trace grows with the
//! truncation rank.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::{effective_rank, truncate_rank, SeededRng, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub step: usize,
    pub matrices: Vec<(String, f64)>,
    pub mean: Option<f64>,
}

/// Effective ranks of the parser BiLSTM gate matrices (input-to-hidden and
/// hidden-to-hidden, both directions, every layer) over training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RankTrace {
    pub layers: usize,
    pub hidden: usize,
    pub entries: Vec<RankEntry>,
}

impl RankTrace {
    pub fn new(layers: usize, hidden: usize) -> Self {
        RankTrace {
            layers,
            hidden,
            entries: Vec::new(),
        }
    }

    pub fn record(&mut self, model: &Model, step: usize) -> Result<()> {
        if let Some(last) = self.entries.last() {
            if step <= last.step {
                return Err(Error::Validation(format!(
                    "rank trace steps must increase: {step} after {}",
                    last.step
                )));
            }
        }
        self.entries.push(track_effective_rank(model, step)?);
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,matrix_name,effective_rank\n");
        for e in &self.entries {
            for (name, rho) in &e.matrices {
                writeln!(out, "{},{},{}", e.step, name, rho).expect("write to String");
            }
        }
        out
    }
}

/// One rank-trace entry; empty when the parser has no BiLSTM.
pub fn track_effective_rank(model: &Model, step: usize) -> Result<RankEntry> {
    let store = model.params();
    let mut matrices = Vec::new();
    for id in model.parser_lstm_matrices() {
        let p = store.get(id);
        matrices.push((p.name.clone(), effective_rank(&p.value)?));
    }
    let mean = (!matrices.is_empty())
        .then(|| matrices.iter().map(|(_, r)| r).sum::<f64>() / matrices.len() as f64);
    Ok(RankEntry { step, matrices, mean })
}

/// Mean and unbiased variance of the edge scores whose dependent (row) and
/// candidate head (column) are both real positions. `mask[0]` is ROOT; its
/// row is never used.
pub fn score_variance(s_edge: &Tensor, mask: &[bool]) -> Result<(f64, f64)> {
    let (rows, cols) = s_edge.require_2d()?;
    if mask.len() != rows || rows != cols {
        return Err(Error::Dimension(format!(
            "mask of {} for a {rows}x{cols} score matrix",
            mask.len()
        )));
    }
    let mut values = Vec::new();
    for i in 1..rows {
        if !mask[i] {
            continue;
        }
        for j in 0..cols {
            if mask[j] {
                values.push(s_edge.at(i, j));
            }
        }
    }
    mean_and_variance(&values)
}

/// Mean and unbiased variance; needs at least two values.
pub fn mean_and_variance(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::Empty(format!(
            "variance needs at least 2 values, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let shift = values[0];
    let mean = shift + values.iter().map(|v| v - shift).sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceEntry {
    pub step: usize,
    pub scaling: String,
    pub score_mean: f64,
    pub score_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct VarianceTrace {
    pub entries: Vec<VarianceEntry>,
}

impl VarianceTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,scaling,score_mean,score_variance\n");
        for e in &self.entries {
            writeln!(out, "{},{},{},{}", e.step, e.scaling, e.score_mean, e.score_variance)
                .expect("write to String");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceLawRow {
    pub d: usize,
    pub samples: usize,
    pub variance: f64,
    pub ratio: f64,
    pub scaled_variance: f64,
}

/// Draws `q, k` with i.i.d. standard-normal entries and measures the
/// variance of `q.k` and of `q.k / sqrt(d)`.
pub fn verify_variance_law(d_values: &[usize], n_samples: usize, rng: &mut SeededRng) -> Result<Vec<VarianceLawRow>> {
    if d_values.contains(&0) {
        return Err(Error::Parameter("dimensions must be positive".into()));
    }
    let mut rows = Vec::with_capacity(d_values.len());
    for &d in d_values {
        let mut raw = Vec::with_capacity(n_samples);
        for _ in 0..n_samples {
            let mut s = 0.0;
            for _ in 0..d {
                s += rng.normal() * rng.normal();
            }
            raw.push(s);
        }
        let (_, variance) = mean_and_variance(&raw)?;
        let k = 1.0 / (d as f64).sqrt();
        let scaled: Vec<f64> = raw.iter().map(|s| s * k).collect();
        let (_, scaled_variance) = mean_and_variance(&scaled)?;
        rows.push(VarianceLawRow {
            d,
            samples: n_samples,
            variance,
            ratio: variance / d as f64,
            scaled_variance,
        });
    }
    Ok(rows)
}

pub const CLAIM1_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim1Trial {
    pub rows: usize,
    pub cols: usize,
    /// `tr(A_r K A_r^T)` for `r = 1..=min(m, n)`.
    pub traces: Vec<f64>,
    /// `tr(K A_r^T A_r)` for the same `r`.
    pub cyclic_traces: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim1Report {
    pub trials: Vec<Claim1Trial>,
    pub violations: usize,
    /// Largest drop `t_{r-1} - t_r`, relative to the sweep's largest trace.
    pub max_violation: f64,
    /// Largest relative gap between the two trace routes.
    pub max_route_gap: f64,
}

impl Claim1Report {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.max_route_gap <= CLAIM1_TOLERANCE
    }
}

/// Trace of `A_r K A_r^T` and of `K A_r^T A_r` for every truncation rank.
pub fn claim1_sweep(a: &Tensor, k: &Tensor) -> Result<Claim1Trial> {
    let (m, n) = a.require_2d()?;
    if k.shape() != [n, n] {
        return Err(Error::Dimension(format!(
            "covariance must be {n}x{n}, got {:?}",
            k.shape()
        )));
    }
    let mut traces = Vec::new();
    let mut cyclic_traces = Vec::new();
    for r in 1..=m.min(n) {
        let ar = truncate_rank(a, r)?;
        let art = ar.transpose()?;
        traces.push(ar.matmul(k)?.matmul(&art)?.trace()?);
        cyclic_traces.push(k.matmul(&art.matmul(&ar)?)?.trace()?);
    }
    Ok(Claim1Trial {
        rows: m,
        cols: n,
        traces,
        cyclic_traces,
    })
}

/// Runs [`claim1_sweep`] on random `A` (sides in `2..=max_dim`) and random
/// PSD `K = G G^T`, counting non-monotone steps.
pub fn verify_claim1(trials: usize, max_dim: usize, rng: &mut SeededRng) -> Result<Claim1Report> {
    if trials == 0 || max_dim < 2 {
        return Err(Error::Parameter("need at least one trial and max_dim >= 2".into()));
    }
    let mut out = Vec::with_capacity(trials);
    for _ in 0..trials {
        let m = 2 + rng.below(max_dim - 1);
        let n = 2 + rng.below(max_dim - 1);
        let a = random_matrix(m, n, rng);
        let g = random_matrix(n, n, rng);
        let k = g.matmul(&g.transpose()?)?;
        out.push(claim1_sweep(&a, &k)?);
    }
    Ok(summarise_claim1(out))
}

pub fn summarise_claim1(trials: Vec<Claim1Trial>) -> Claim1Report {
    let mut violations = 0;
    let mut max_violation: f64 = 0.0;
    let mut max_route_gap: f64 = 0.0;
    for t in &trials {
        let scale = t.traces.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for w in t.traces.windows(2) {
            let drop = w[0] - w[1];
            if drop > CLAIM1_TOLERANCE * scale {
                violations += 1;
            }
            if scale > 0.0 {
                max_violation = max_violation.max(drop / scale);
            }
        }
        for (a, b) in t.traces.iter().zip(&t.cyclic_traces) {
            let denom = a.abs().max(b.abs());
            if denom > 0.0 {
                max_route_gap = max_route_gap.max((a - b).abs() / denom);
            }
        }
    }
    Claim1Report {
        trials,
        violations,
        max_violation,
        max_route_gap,
    }
}

fn random_matrix(m: usize, n: usize, rng: &mut SeededRng) -> Tensor {
    Tensor::new(vec![m, n], (0..m * n).map(|_| rng.normal()).collect()).expect("shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn claim1_diagonal_case() {
        let t = claim1_sweep(&Tensor::diag(&[2.0, 1.0]), &Tensor::eye(2)).unwrap();
        assert!((t.traces[0] - 4.0).abs() < 1e-12 && (t.traces[1] - 5.0).abs() < 1e-12);
        let zero = claim1_sweep(&Tensor::diag(&[2.0, 1.0]), &Tensor::zeros(&[2, 2])).unwrap();
        assert_eq!(zero.traces, vec![0.0, 0.0]);
        assert!(summarise_claim1(vec![zero]).passed());
    }

    #[test]
    fn claim1_random_trials_pass() {
        let r = verify_claim1(30, 10, &mut SeededRng::new(1)).unwrap();
        assert!(r.passed(), "{} violations, gap {}", r.violations, r.max_route_gap);
    }

    #[test]
    fn variance_examples() {
        let (_, v) = score_variance(&Tensor::filled(&[3, 3], 2.5), &[true; 3]).unwrap();
        assert_eq!(v, 0.0);
        let (m, v) = mean_and_variance(&[0.0, 2.0]).unwrap();
        assert_eq!((m, v), (1.0, 2.0));
        assert!(mean_and_variance(&[1.0]).is_err());
    }

    #[test]
    fn score_variance_scales_quadratically() {
        let mut rng = SeededRng::new(6);
        let s = Tensor::new(vec![5, 5], (0..25).map(|_| rng.normal()).collect()).unwrap();
        let mask = [true, true, true, true, false];
        let (_, v) = score_variance(&s, &mask).unwrap();
        let (_, vs) = score_variance(&s.scaled(0.25), &mask).unwrap();
        assert!((vs - v / 16.0).abs() < 1e-14 * v);
    }

    #[test]
    fn small_variance_law() {
        let rows = verify_variance_law(&[1, 16], 20_000, &mut SeededRng::new(3)).unwrap();
        assert!((rows[0].variance - 1.0).abs() < 0.1);
        assert!((rows[1].ratio - 1.0).abs() < 0.1);
        assert!((rows[1].scaled_variance - 1.0).abs() < 0.1);
    }
}
