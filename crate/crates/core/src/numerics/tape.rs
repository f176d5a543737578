//! Minimal reverse-mode differentiation over row-major matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters are
//! borrowed from a [`ParameterStore`] rather than copied, and
//! [`Tape::backward`] returns a fresh [`Gradients`] buffer so several tapes
//! can be differentiated independently and summed in a fixed order.

use std::collections::HashMap;

use crate::numerics::params::{Gradients, ParamId, ParameterStore};
use crate::numerics::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Value {
    Owned(Vec<f64>),
    Param(ParamId),
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    AddCol(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Elu(Var),
    LeakyRelu(Var, f64),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    LogSoftmaxRows(Var, Option<Vec<bool>>),
    SoftmaxRows(Var),
    Sum(Var),
    GatherEntries(Var, Vec<(usize, usize)>),
    GatherBlocks(Var, Vec<(usize, usize)>),
    Biaffine {
        x1: Var,
        x2: Var,
        w: Var,
        b: Var,
        labels: usize,
        scale: f64,
        projected: Vec<f64>,
    },
    Permute3 {
        x: Var,
        dims: [usize; 3],
        perm: [usize; 3],
    },
    Lstm {
        xw: Var,
        w_hh: Var,
        reverse: bool,
        gates: Vec<f64>,
        cells: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Value,
    op: Op,
    needs_grad: bool,
}

pub struct Tape<'a> {
    store: &'a ParameterStore,
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParameterStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'a ParameterStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(data.len(), rows * cols, "{op:?}");
        self.nodes.push(Node {
            rows,
            cols,
            value: Value::Owned(data),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn data(&self, v: Var) -> &[f64] {
        match &self.nodes[v.0].value {
            Value::Owned(d) => d,
            Value::Param(id) => self.store.value(*id).data(),
        }
    }

    pub fn value(&self, v: Var) -> Tensor {
        let (r, c) = self.dims(v);
        Tensor::new(vec![r, c], self.data(v).to_vec()).expect("node shape")
    }

    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.dims(v), (1, 1));
        self.data(v)[0]
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; never differentiated.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        let (r, c) = t.matrix_dims();
        self.push(r, c, t.data().to_vec(), Op::Leaf, false)
    }

    pub fn constant_matrix(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Var {
        self.push(rows, cols, data, Op::Leaf, false)
    }

    /// Parameter leaf viewed as a matrix (see [`Tensor::matrix_dims`]).
    /// Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        let p = self.store.get(id);
        let (rows, cols) = p.value.matrix_dims();
        self.nodes.push(Node {
            rows,
            cols,
            value: Value::Param(id),
            op: Op::Param(id),
            needs_grad: p.requires_grad,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        assert_eq!(k, k2, "matmul {m}x{k} by {k2}x{n}");
        let mut out = vec![0.0; m * n];
        gemm_s(m, k, n, 1.0, self.data(a), (k, 1), self.data(b), (n, 1), 0.0, &mut out, (n, 1));
        let needs = self.needs(a) || self.needs(b);
        self.push(m, n, out, Op::MatMul(a, b), needs)
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        assert_eq!(k, k2, "matmul_nt {m}x{k} by ({n}x{k2})^T");
        let mut out = vec![0.0; m * n];
        gemm_s(m, k, n, 1.0, self.data(a), (k, 1), self.data(b), (1, k), 0.0, &mut out, (n, 1));
        let needs = self.needs(a) || self.needs(b);
        self.push(m, n, out, Op::MatMulNT(a, b), needs)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let src = self.data(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let needs = self.needs(a);
        self.push(c, r, out, Op::Transpose(a), needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.dims(a), self.dims(b), "add shape mismatch");
        let (r, c) = self.dims(a);
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let needs = self.needs(a) || self.needs(b);
        self.push(r, c, out, Op::Add(a, b), needs)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.dims(a), self.dims(b), "mul shape mismatch");
        let (r, c) = self.dims(a);
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let needs = self.needs(a) || self.needs(b);
        self.push(r, c, out, Op::Mul(a, b), needs)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let (r, c) = self.dims(a);
        let out = self.data(a).iter().map(|x| k * x).collect();
        let needs = self.needs(a);
        self.push(r, c, out, Op::Scale(a, k), needs)
    }

    /// `x + 1 r` with `r` a `1 x cols` row (a 1-D parameter qualifies).
    pub fn add_row(&mut self, x: Var, r: Var) -> Var {
        let (rows, cols) = self.dims(x);
        assert_eq!(self.dims(r), (1, cols), "add_row shape");
        let row = self.data(r);
        let out = self
            .data(x)
            .chunks(cols.max(1))
            .flat_map(|chunk| chunk.iter().zip(row).map(|(a, b)| a + b))
            .collect();
        let needs = self.needs(x) || self.needs(r);
        self.push(rows, cols, out, Op::AddRow(x, r), needs)
    }

    /// `x + c 1^T` with `c` a `rows x 1` column.
    pub fn add_col(&mut self, x: Var, c: Var) -> Var {
        let (rows, cols) = self.dims(x);
        assert_eq!(self.dims(c), (rows, 1), "add_col shape");
        let col = self.data(c);
        let out = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v + col[i / cols])
            .collect();
        let needs = self.needs(x) || self.needs(c);
        self.push(rows, cols, out, Op::AddCol(x, c), needs)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.dims(a);
        let out = self.data(a).iter().map(|x| f(*x)).collect();
        let needs = self.needs(a);
        self.push(r, c, out, op, needs)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    /// ELU with unit alpha.
    pub fn elu(&mut self, a: Var) -> Var {
        self.unary(a, elu, Op::Elu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { slope * x }, Op::LeakyRelu(a, slope))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.dims(parts[0]).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|p| {
                assert_eq!(self.dims(*p).0, rows, "concat_cols row mismatch");
                self.dims(*p).1
            })
            .collect();
        let cols: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for (p, w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.data(*p)[i * w..(i + 1) * w]);
            }
        }
        let needs = parts.iter().any(|p| self.needs(*p));
        self.push(rows, cols, out, Op::ConcatCols(parts.to_vec()), needs)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.dims(parts[0]).1;
        let mut out = Vec::new();
        let mut rows = 0;
        for p in parts {
            let (r, c) = self.dims(*p);
            assert_eq!(c, cols, "concat_rows column mismatch");
            rows += r;
            out.extend_from_slice(self.data(*p));
        }
        let needs = parts.iter().any(|p| self.needs(*p));
        self.push(rows, cols, out, Op::ConcatRows(parts.to_vec()), needs)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let (rows, cols) = self.dims(a);
        assert!(start <= end && end <= cols, "slice {start}..{end} of {cols}");
        let w = end - start;
        let src = self.data(a);
        let mut out = Vec::with_capacity(rows * w);
        for i in 0..rows {
            out.extend_from_slice(&src[i * cols + start..i * cols + end]);
        }
        let needs = self.needs(a);
        self.push(rows, w, out, Op::SliceCols(a, start), needs)
    }

    pub fn row(&mut self, a: Var, i: usize) -> Var {
        self.gather_rows(a, &[i])
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let (rows, cols) = self.dims(a);
        let src = self.data(a);
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            assert!(i < rows, "gather row {i} of {rows}");
            out.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        let needs = self.needs(a);
        self.push(idx.len(), cols, out, Op::GatherRows(a, idx.to_vec()), needs)
    }

    /// Row-wise layer normalisation with `1 x cols` gain and bias.
    pub fn layer_norm_rows(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let (rows, cols) = self.dims(x);
        assert_eq!(self.dims(gain), (1, cols));
        assert_eq!(self.dims(bias), (1, cols));
        let src = self.data(x);
        let g = self.data(gain);
        let b = self.data(bias);
        let mut xhat = vec![0.0; rows * cols];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            let row = &src[i * cols..(i + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..cols {
                let h = (row[j] - mean) * inv;
                xhat[i * cols + j] = h;
                out[i * cols + j] = g[j] * h + b[j];
            }
        }
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        self.push(
            rows,
            cols,
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            needs,
        )
    }

    /// Row-wise log-softmax. Columns switched off in `col_mask` are left
    /// out of the normaliser and read as 0 in the output.
    pub fn log_softmax_rows(&mut self, a: Var, col_mask: Option<&[bool]>) -> Var {
        let (rows, cols) = self.dims(a);
        if let Some(m) = col_mask {
            assert_eq!(m.len(), cols);
        }
        let keep = |j: usize| col_mask.is_none_or(|m| m[j]);
        let src = self.data(a);
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            let row = &src[i * cols..(i + 1) * cols];
            let max = (0..cols)
                .filter(|&j| keep(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            let lse = max
                + (0..cols)
                    .filter(|&j| keep(j))
                    .map(|j| (row[j] - max).exp())
                    .sum::<f64>()
                    .ln();
            for j in (0..cols).filter(|&j| keep(j)) {
                out[i * cols + j] = row[j] - lse;
            }
        }
        let needs = self.needs(a);
        self.push(
            rows,
            cols,
            out,
            Op::LogSoftmaxRows(a, col_mask.map(<[bool]>::to_vec)),
            needs,
        )
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (rows, cols) = self.dims(a);
        let src = self.data(a);
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            out.extend(crate::numerics::ops::softmax_in_place(
                src[i * cols..(i + 1) * cols].to_vec(),
            ));
        }
        let needs = self.needs(a);
        self.push(rows, cols, out, Op::SoftmaxRows(a), needs)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.data(a).iter().sum();
        let needs = self.needs(a);
        self.push(1, 1, vec![total], Op::Sum(a), needs)
    }

    /// `1 x len` vector of the selected `(row, col)` entries.
    pub fn gather_entries(&mut self, a: Var, entries: &[(usize, usize)]) -> Var {
        let (rows, cols) = self.dims(a);
        let src = self.data(a);
        let out = entries
            .iter()
            .map(|&(r, c)| {
                assert!(r < rows && c < cols);
                src[r * cols + c]
            })
            .collect();
        let needs = self.needs(a);
        self.push(1, entries.len(), out, Op::GatherEntries(a, entries.to_vec()), needs)
    }

    /// Row `k` of the output is `a[row_k, start_k .. start_k + width]`.
    pub fn gather_blocks(&mut self, a: Var, blocks: &[(usize, usize)], width: usize) -> Var {
        let (rows, cols) = self.dims(a);
        let src = self.data(a);
        let mut out = Vec::with_capacity(blocks.len() * width);
        for &(r, s) in blocks {
            assert!(r < rows && s + width <= cols);
            out.extend_from_slice(&src[r * cols + s..r * cols + s + width]);
        }
        let needs = self.needs(a);
        self.push(blocks.len(), width, out, Op::GatherBlocks(a, blocks.to_vec()), needs)
    }

    /// Biaffine scores laid out as `[m, labels, k]` (stored `m x labels*k`):
    /// `out[i, c, j] = scale * (x1_i^T W_c x2_j + x1_i^T b)`.
    ///
    /// `w` is the `d1 x (labels * d2)` view of a `[d1, labels, d2]` tensor,
    /// `b` is a `1 x d1` row.
    pub fn biaffine(&mut self, x1: Var, x2: Var, w: Var, b: Var, labels: usize, scale: f64) -> Var {
        let (m, d1) = self.dims(x1);
        let (k, d2) = self.dims(x2);
        assert_eq!(self.dims(w), (d1, labels * d2), "biaffine weight shape");
        assert_eq!(self.dims(b), (1, d1), "biaffine bias shape");
        let cd = labels * d2;
        let mut projected = vec![0.0; m * cd];
        gemm_s(m, d1, cd, 1.0, self.data(x1), (d1, 1), self.data(w), (cd, 1), 0.0, &mut projected, (cd, 1));
        let ck = labels * k;
        let mut out = vec![0.0; m * ck];
        for c in 0..labels {
            gemm_s(
                m,
                d2,
                k,
                scale,
                &projected[c * d2..],
                (cd, 1),
                self.data(x2),
                (1, d2),
                0.0,
                &mut out[c * k..],
                (ck, 1),
            );
        }
        let x1d = self.data(x1);
        let bd = self.data(b);
        for i in 0..m {
            let bias: f64 = x1d[i * d1..(i + 1) * d1].iter().zip(bd).map(|(x, y)| x * y).sum();
            for v in &mut out[i * ck..(i + 1) * ck] {
                *v += scale * bias;
            }
        }
        let needs = [x1, x2, w, b].iter().any(|v| self.needs(*v));
        self.push(
            m,
            ck,
            out,
            Op::Biaffine {
                x1,
                x2,
                w,
                b,
                labels,
                scale,
                projected,
            },
            needs,
        )
    }

    /// Axis permutation of `a` viewed as a `dims` tensor. The result is
    /// stored as `dims[perm[0]] x (dims[perm[1]] * dims[perm[2]])`.
    pub fn permute3(&mut self, a: Var, dims: [usize; 3], perm: [usize; 3]) -> Var {
        let (r, c) = self.dims(a);
        assert_eq!(r * c, dims.iter().product::<usize>());
        let od = [dims[perm[0]], dims[perm[1]], dims[perm[2]]];
        let src = self.data(a);
        let mut out = vec![0.0; src.len()];
        for_each_permuted(dims, perm, |src_i, dst_i| out[dst_i] = src[src_i]);
        let needs = self.needs(a);
        self.push(od[0], od[1] * od[2], out, Op::Permute3 { x: a, dims, perm }, needs)
    }

    /// One LSTM direction over a sequence. `xw` holds the input projections
    /// plus bias (`n x 4h`, gate order i, f, g, o); `w_hh` is `h x 4h`.
    /// Row `t` of the result is the hidden state at position `t`; with
    /// `reverse` the recurrence runs from the last position to the first.
    pub fn lstm(&mut self, xw: Var, w_hh: Var, reverse: bool) -> Var {
        let (n, h4) = self.dims(xw);
        let h = h4 / 4;
        assert_eq!(h4, 4 * h, "lstm input width must be 4h");
        assert_eq!(self.dims(w_hh), (h, h4), "lstm recurrent weight shape");
        let x = self.data(xw);
        let w = self.data(w_hh);
        let mut gates = vec![0.0; n * h4];
        let mut cells = vec![0.0; n * h];
        let mut out = vec![0.0; n * h];
        let mut z = vec![0.0; h4];
        let mut prev: Option<usize> = None;
        for step in 0..n {
            let t = if reverse { n - 1 - step } else { step };
            z.copy_from_slice(&x[t * h4..(t + 1) * h4]);
            if let Some(p) = prev {
                gemm_s(1, h, h4, 1.0, &out[p * h..], (h, 1), w, (h4, 1), 1.0, &mut z, (h4, 1));
            }
            let g = &mut gates[t * h4..(t + 1) * h4];
            for k in 0..h {
                g[k] = sigmoid(z[k]);
                g[h + k] = sigmoid(z[h + k]);
                g[2 * h + k] = z[2 * h + k].tanh();
                g[3 * h + k] = sigmoid(z[3 * h + k]);
            }
            for k in 0..h {
                let c_prev = prev.map_or(0.0, |p| cells[p * h + k]);
                let c = g[h + k] * c_prev + g[k] * g[2 * h + k];
                cells[t * h + k] = c;
                out[t * h + k] = g[3 * h + k] * c.tanh();
            }
            prev = Some(t);
        }
        let needs = self.needs(xw) || self.needs(w_hh);
        self.push(
            n,
            h,
            out,
            Op::Lstm {
                xw,
                w_hh,
                reverse,
                gates,
                cells,
            },
            needs,
        )
    }

    /// Reverse pass from a `1 x 1` root.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.dims(root), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut out = Gradients::new(self.store.len());
        grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(idx, node, &g, &mut grads, &mut out);
        }
        out
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.needs(v) {
            return None;
        }
        let len = self.nodes[v.0].rows * self.nodes[v.0].cols;
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn propagate(
        &self,
        idx: usize,
        node: &Node,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        out: &mut Gradients,
    ) {
        let own = self.data(Var(idx));
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => out.add(*id, g),
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = node.cols;
                if let Some(da) = self.slot(grads, *a) {
                    gemm_s(m, n, k, 1.0, g, (n, 1), self.data(*b), (1, n), 1.0, da, (k, 1));
                }
                if let Some(db) = self.slot(grads, *b) {
                    gemm_s(k, m, n, 1.0, self.data(*a), (1, k), g, (n, 1), 1.0, db, (n, 1));
                }
            }
            Op::MatMulNT(a, b) => {
                let (m, k) = self.dims(*a);
                let n = node.cols;
                if let Some(da) = self.slot(grads, *a) {
                    gemm_s(m, n, k, 1.0, g, (n, 1), self.data(*b), (k, 1), 1.0, da, (k, 1));
                }
                if let Some(db) = self.slot(grads, *b) {
                    gemm_s(n, m, k, 1.0, g, (1, n), self.data(*a), (k, 1), 1.0, db, (k, 1));
                }
            }
            Op::Transpose(a) => {
                let (r, c) = self.dims(*a);
                if let Some(da) = self.slot(grads, *a) {
                    for i in 0..r {
                        for j in 0..c {
                            da[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(d) = self.slot(grads, *v) {
                        add_into(d, g);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                if let Some(da) = self.slot(grads, *a) {
                    for ((d, gg), y) in da.iter_mut().zip(g).zip(bd) {
                        *d += gg * y;
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    for ((d, gg), x) in db.iter_mut().zip(g).zip(ad) {
                        *d += gg * x;
                    }
                }
            }
            Op::Scale(a, k) => {
                if let Some(da) = self.slot(grads, *a) {
                    for (d, gg) in da.iter_mut().zip(g) {
                        *d += k * gg;
                    }
                }
            }
            Op::AddRow(x, r) => {
                if let Some(dx) = self.slot(grads, *x) {
                    add_into(dx, g);
                }
                let cols = node.cols;
                if let Some(dr) = self.slot(grads, *r) {
                    for chunk in g.chunks(cols.max(1)) {
                        add_into(dr, chunk);
                    }
                }
            }
            Op::AddCol(x, c) => {
                if let Some(dx) = self.slot(grads, *x) {
                    add_into(dx, g);
                }
                let cols = node.cols;
                if let Some(dc) = self.slot(grads, *c) {
                    for (i, chunk) in g.chunks(cols.max(1)).enumerate() {
                        dc[i] += chunk.iter().sum::<f64>();
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(da) = self.slot(grads, *a) {
                    for ((d, gg), y) in da.iter_mut().zip(g).zip(own) {
                        *d += gg * y * (1.0 - y);
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(da) = self.slot(grads, *a) {
                    for ((d, gg), y) in da.iter_mut().zip(g).zip(own) {
                        *d += gg * (1.0 - y * y);
                    }
                }
            }
            Op::Elu(a) => {
                let x = self.data(*a);
                if let Some(da) = self.slot(grads, *a) {
                    for (((d, gg), y), xi) in da.iter_mut().zip(g).zip(own).zip(x) {
                        *d += gg * if *xi > 0.0 { 1.0 } else { y + 1.0 };
                    }
                }
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.data(*a);
                if let Some(da) = self.slot(grads, *a) {
                    for ((d, gg), xi) in da.iter_mut().zip(g).zip(x) {
                        *d += gg * if *xi > 0.0 { 1.0 } else { *slope };
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let cols = node.cols;
                let mut offset = 0;
                for p in parts {
                    let w = self.dims(*p).1;
                    if let Some(dp) = self.slot(grads, *p) {
                        for i in 0..node.rows {
                            add_into(
                                &mut dp[i * w..(i + 1) * w],
                                &g[i * cols + offset..i * cols + offset + w],
                            );
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.data(*p).len();
                    if let Some(dp) = self.slot(grads, *p) {
                        add_into(dp, &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::SliceCols(a, start) => {
                let cols = self.dims(*a).1;
                let w = node.cols;
                if let Some(da) = self.slot(grads, *a) {
                    for i in 0..node.rows {
                        add_into(
                            &mut da[i * cols + start..i * cols + start + w],
                            &g[i * w..(i + 1) * w],
                        );
                    }
                }
            }
            Op::GatherRows(a, rows) => {
                let cols = node.cols;
                if let Some(da) = self.slot(grads, *a) {
                    for (k, &r) in rows.iter().enumerate() {
                        add_into(&mut da[r * cols..(r + 1) * cols], &g[k * cols..(k + 1) * cols]);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let cols = node.cols;
                let gd = self.data(*gain);
                if let Some(dg) = self.slot(grads, *gain) {
                    for (i, chunk) in g.chunks(cols).enumerate() {
                        for j in 0..cols {
                            dg[j] += chunk[j] * xhat[i * cols + j];
                        }
                    }
                }
                if let Some(db) = self.slot(grads, *bias) {
                    for chunk in g.chunks(cols) {
                        add_into(db, chunk);
                    }
                }
                if let Some(dx) = self.slot(grads, *x) {
                    let n = cols as f64;
                    for i in 0..node.rows {
                        let h = &xhat[i * cols..(i + 1) * cols];
                        let dy = &g[i * cols..(i + 1) * cols];
                        let dh: Vec<f64> = dy.iter().zip(gd).map(|(a, b)| a * b).collect();
                        let sum_dh: f64 = dh.iter().sum();
                        let sum_dh_h: f64 = dh.iter().zip(h).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            dx[i * cols + j] +=
                                inv_std[i] / n * (n * dh[j] - sum_dh - h[j] * sum_dh_h);
                        }
                    }
                }
            }
            Op::LogSoftmaxRows(a, mask) => {
                let cols = node.cols;
                if let Some(da) = self.slot(grads, *a) {
                    let keep = |j: usize| mask.as_ref().is_none_or(|m| m[j]);
                    for i in 0..node.rows {
                        let y = &own[i * cols..(i + 1) * cols];
                        let dy = &g[i * cols..(i + 1) * cols];
                        let total: f64 = (0..cols).filter(|&j| keep(j)).map(|j| dy[j]).sum();
                        for j in (0..cols).filter(|&j| keep(j)) {
                            da[i * cols + j] += dy[j] - y[j].exp() * total;
                        }
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let cols = node.cols;
                if let Some(da) = self.slot(grads, *a) {
                    for i in 0..node.rows {
                        let y = &own[i * cols..(i + 1) * cols];
                        let dy = &g[i * cols..(i + 1) * cols];
                        let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            da[i * cols + j] += y[j] * (dy[j] - dot);
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(da) = self.slot(grads, *a) {
                    for d in da.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::GatherEntries(a, entries) => {
                let cols = self.dims(*a).1;
                if let Some(da) = self.slot(grads, *a) {
                    for (k, &(r, c)) in entries.iter().enumerate() {
                        da[r * cols + c] += g[k];
                    }
                }
            }
            Op::GatherBlocks(a, blocks) => {
                let cols = self.dims(*a).1;
                let w = node.cols;
                if let Some(da) = self.slot(grads, *a) {
                    for (k, &(r, s)) in blocks.iter().enumerate() {
                        add_into(&mut da[r * cols + s..r * cols + s + w], &g[k * w..(k + 1) * w]);
                    }
                }
            }
            Op::Biaffine {
                x1,
                x2,
                w,
                b,
                labels,
                scale,
                projected,
            } => {
                let (m, d1) = self.dims(*x1);
                let (k, d2) = self.dims(*x2);
                let labels = *labels;
                let scale = *scale;
                let cd = labels * d2;
                let ck = labels * k;
                let gsum: Vec<f64> = g.chunks(ck).map(|c| c.iter().sum()).collect();
                let need_proj = self.needs(*x1) || self.needs(*w);
                let mut dproj = if need_proj { vec![0.0; m * cd] } else { Vec::new() };
                for c in 0..labels {
                    if need_proj {
                        gemm_s(m, k, d2, scale, &g[c * k..], (ck, 1), self.data(*x2), (d2, 1), 0.0, &mut dproj[c * d2..], (cd, 1));
                    }
                    if let Some(dx2) = self.slot(grads, *x2) {
                        gemm_s(k, m, d2, scale, &g[c * k..], (1, ck), &projected[c * d2..], (cd, 1), 1.0, dx2, (d2, 1));
                    }
                }
                let x1d = self.data(*x1);
                let bd = self.data(*b);
                if let Some(dx1) = self.slot(grads, *x1) {
                    gemm_s(m, cd, d1, 1.0, &dproj, (cd, 1), self.data(*w), (1, cd), 1.0, dx1, (d1, 1));
                    for i in 0..m {
                        for p in 0..d1 {
                            dx1[i * d1 + p] += scale * gsum[i] * bd[p];
                        }
                    }
                }
                if let Some(dw) = self.slot(grads, *w) {
                    gemm_s(d1, m, cd, 1.0, x1d, (1, d1), &dproj, (cd, 1), 1.0, dw, (cd, 1));
                }
                if let Some(db) = self.slot(grads, *b) {
                    for i in 0..m {
                        for p in 0..d1 {
                            db[p] += scale * gsum[i] * x1d[i * d1 + p];
                        }
                    }
                }
            }
            Op::Permute3 { x, dims, perm } => {
                if let Some(dx) = self.slot(grads, *x) {
                    for_each_permuted(*dims, *perm, |src_i, dst_i| dx[src_i] += g[dst_i]);
                }
            }
            Op::Lstm {
                xw,
                w_hh,
                reverse,
                gates,
                cells,
            } => {
                let n = node.rows;
                let h = node.cols;
                let h4 = 4 * h;
                let w = self.data(*w_hh);
                let mut dz_all = vec![0.0; n * h4];
                let mut dh_next = vec![0.0; h];
                let mut dc_next = vec![0.0; h];
                for step in (0..n).rev() {
                    let t = if *reverse { n - 1 - step } else { step };
                    let prev = if step == 0 {
                        None
                    } else if *reverse {
                        Some(t + 1)
                    } else {
                        Some(t - 1)
                    };
                    let gt = &gates[t * h4..(t + 1) * h4];
                    let dz = &mut dz_all[t * h4..(t + 1) * h4];
                    for k in 0..h {
                        let (i, f, gg, o) = (gt[k], gt[h + k], gt[2 * h + k], gt[3 * h + k]);
                        let tc = cells[t * h + k].tanh();
                        let dh = g[t * h + k] + dh_next[k];
                        let dc = dc_next[k] + dh * o * (1.0 - tc * tc);
                        let c_prev = prev.map_or(0.0, |p| cells[p * h + k]);
                        dz[k] = dc * gg * i * (1.0 - i);
                        dz[h + k] = dc * c_prev * f * (1.0 - f);
                        dz[2 * h + k] = dc * i * (1.0 - gg * gg);
                        dz[3 * h + k] = dh * tc * o * (1.0 - o);
                        dc_next[k] = dc * f;
                    }
                    if prev.is_some() {
                        gemm_s(1, h4, h, 1.0, dz, (h4, 1), w, (1, h4), 0.0, &mut dh_next, (h, 1));
                    }
                }
                if let Some(dw) = self.slot(grads, *w_hh) {
                    for step in 1..n {
                        let t = if *reverse { n - 1 - step } else { step };
                        let p = if *reverse { t + 1 } else { t - 1 };
                        gemm_s(h, 1, h4, 1.0, &own[p * h..], (1, 1), &dz_all[t * h4..], (h4, 1), 1.0, dw, (h4, 1));
                    }
                }
                if let Some(dx) = self.slot(grads, *xw) {
                    add_into(dx, &dz_all);
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn for_each_permuted(dims: [usize; 3], perm: [usize; 3], mut f: impl FnMut(usize, usize)) {
    let od = [dims[perm[0]], dims[perm[1]], dims[perm[2]]];
    let mut idx = [0usize; 3];
    for i0 in 0..dims[0] {
        idx[0] = i0;
        for i1 in 0..dims[1] {
            idx[1] = i1;
            for i2 in 0..dims[2] {
                idx[2] = i2;
                let src = (i0 * dims[1] + i1) * dims[2] + i2;
                let dst = (idx[perm[0]] * od[1] + idx[perm[1]]) * od[2] + idx[perm[2]];
                f(src, dst);
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Strided `c = alpha * a * b + beta * c`; `a` is `m x k`, `b` is `k x n`,
/// each with explicit `(row_stride, col_stride)`.
#[allow(clippy::too_many_arguments)]
fn gemm_s(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let span = |r: usize, c: usize, rs: usize, cs: usize| (r - 1) * rs + (c - 1) * cs + 1;
    assert!(span(m, n, rsc, csc) <= c.len(), "gemm output out of bounds");
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                c[i * rsc + j * csc] *= beta;
            }
        }
        return;
    }
    assert!(span(m, k, rsa, csa) <= a.len(), "gemm lhs out of bounds");
    assert!(span(k, n, rsb, csb) <= b.len(), "gemm rhs out of bounds");
    // SAFETY: the assertions above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}
