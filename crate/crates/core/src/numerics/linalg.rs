//! Singular value decomposition and the rank measures built on it.

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// Relative cutoff below which a singular value counts as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

const MAX_SWEEPS: usize = 80;

/// Thin SVD `A = U diag(s) V^T` with `k = min(m, n)` columns in `U` and `V`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// Descending, non-negative.
    pub singular_values: Vec<f64>,
    /// `m x k`, orthonormal columns.
    pub left_vectors: Tensor,
    /// `n x k`, orthonormal columns.
    pub right_vectors: Tensor,
}

impl SvdResult {
    pub fn numerical_rank(&self) -> usize {
        let top = self.singular_values.first().copied().unwrap_or(0.0);
        self.singular_values
            .iter()
            .filter(|&&s| s > RANK_TOLERANCE * top)
            .count()
    }

    /// `sum_{i < r} s_i u_i v_i^T`.
    pub fn reconstruct(&self, r: usize) -> Tensor {
        let (m, k) = self.left_vectors.matrix_dims();
        let n = self.right_vectors.matrix_dims().0;
        let u = self.left_vectors.data();
        let v = self.right_vectors.data();
        let mut out = vec![0.0; m * n];
        for idx in 0..r.min(k) {
            let s = self.singular_values[idx];
            if s == 0.0 {
                continue;
            }
            for i in 0..m {
                let ui = s * u[i * k + idx];
                if ui == 0.0 {
                    continue;
                }
                let row = &mut out[i * n..(i + 1) * n];
                for (j, slot) in row.iter_mut().enumerate() {
                    *slot += ui * v[j * k + idx];
                }
            }
        }
        Tensor::new(vec![m, n], out).expect("shape consistent")
    }
}

/// One-sided (Hestenes) Jacobi SVD.
pub fn svd(a: &Tensor) -> Result<SvdResult> {
    let (m, n) = a.require_2d()?;
    if !a.is_finite() {
        return Err(Error::Domain("svd input has non-finite entries".into()));
    }
    if m == 0 || n == 0 {
        return Err(Error::Dimension(format!("svd of empty {m}x{n} matrix")));
    }
    if m < n {
        let t = svd(&a.transpose()?)?;
        return Ok(SvdResult {
            singular_values: t.singular_values,
            left_vectors: t.right_vectors,
            right_vectors: t.left_vectors,
        });
    }

    // columns of A, stored contiguously: cols[j] has length m
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..m).map(|i| a.data()[i * n + j]).collect())
        .collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS {
        sweeps += 1;
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (&cols[p], &cols[q]);
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for i in 0..m {
                        alpha += cp[i] * cp[i];
                        beta += cq[i] * cq[i];
                        gamma += cp[i] * cq[i];
                    }
                    (alpha, beta, gamma)
                };
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                if gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut vcols, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numeric {
            message: "one-sided Jacobi SVD did not converge".into(),
            iterations: sweeps,
        });
    }

    let mut order: Vec<(f64, usize)> = cols
        .iter()
        .enumerate()
        .map(|(j, c)| (c.iter().map(|x| x * x).sum::<f64>().sqrt(), j))
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let top = order[0].0;
    let mut singular_values = Vec::with_capacity(n);
    let mut ucols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut pending = Vec::new();
    for (slot, &(s, j)) in order.iter().enumerate() {
        if s > RANK_TOLERANCE * top && s > 0.0 {
            singular_values.push(s);
            ucols.push(cols[j].iter().map(|x| x / s).collect());
        } else {
            singular_values.push(0.0);
            ucols.push(Vec::new());
            pending.push(slot);
        }
    }
    complete_basis(&mut ucols, &pending, m);

    let mut u = vec![0.0; m * n];
    let mut v = vec![0.0; n * n];
    for (slot, &(_, j)) in order.iter().enumerate() {
        for i in 0..m {
            u[i * n + slot] = ucols[slot][i];
        }
        for i in 0..n {
            v[i * n + slot] = vcols[j][i];
        }
    }
    Ok(SvdResult {
        singular_values,
        left_vectors: Tensor::new(vec![m, n], u)?,
        right_vectors: Tensor::new(vec![n, n], v)?,
    })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let cp = &mut left[p];
    let cq = &mut right[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let xq = *y;
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Fill the listed (zero singular value) columns with unit vectors
/// orthogonal to every other column, by Gram-Schmidt over the standard basis.
fn complete_basis(cols: &mut [Vec<f64>], pending: &[usize], m: usize) {
    let mut candidate = 0;
    for &slot in pending {
        loop {
            assert!(candidate < m, "ran out of basis candidates");
            let mut e = vec![0.0; m];
            e[candidate] = 1.0;
            candidate += 1;
            // two passes of modified Gram-Schmidt for stability
            for _ in 0..2 {
                for other in cols.iter() {
                    if other.is_empty() {
                        continue;
                    }
                    let dot: f64 = e.iter().zip(other).map(|(a, b)| a * b).sum();
                    for (x, o) in e.iter_mut().zip(other) {
                        *x -= dot * o;
                    }
                }
            }
            let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                cols[slot] = e.into_iter().map(|x| x / norm).collect();
                break;
            }
        }
    }
}

/// `exp(H(p))` with `p_i = s_i / sum_j s_j` over the non-zero singular values.
pub fn effective_rank(a: &Tensor) -> Result<f64> {
    let svd = svd(a)?;
    effective_rank_from_singular_values(&svd.singular_values)
}

pub fn effective_rank_from_singular_values(singular_values: &[f64]) -> Result<f64> {
    let top = singular_values.iter().copied().fold(0.0, f64::max);
    if top == 0.0 {
        return Err(Error::Domain("effective rank of an all-zero matrix".into()));
    }
    let kept: Vec<f64> = singular_values
        .iter()
        .copied()
        .filter(|&s| s > RANK_TOLERANCE * top)
        .collect();
    let total: f64 = kept.iter().sum();
    let entropy: f64 = kept
        .iter()
        .map(|s| {
            let p = s / total;
            -p * p.ln()
        })
        .sum();
    Ok(entropy.exp())
}

/// Best rank-`r` approximation by truncated SVD.
pub fn truncate_rank(a: &Tensor, r: usize) -> Result<Tensor> {
    let (m, n) = a.require_2d()?;
    if r == 0 || r > m.min(n) {
        return Err(Error::Parameter(format!(
            "rank {r} outside 1..={}",
            m.min(n)
        )));
    }
    Ok(svd(a)?.reconstruct(r))
}
