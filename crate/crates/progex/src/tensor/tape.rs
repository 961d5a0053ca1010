//! Reverse-mode autodiff over [`Matrix`] values.
//!
//! A [`Tape`] is a write-once list of nodes; each op records its inputs
//! and caches its forward value. [`Tape::backward`] walks the list in
//! reverse and accumulates parameter gradients. Shape errors are
//! programmer errors and panic at op construction time.

use std::collections::BTreeMap;

use super::params::ParamStore;
use super::{softmax_rows_in_place, Matrix};

/// Handle to a tape node. Cheap to copy; only valid for the tape that
/// produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Const,
    Param(usize),
    /// Rows of a parameter matrix gathered by index (embedding lookup).
    GatherRows(usize, Vec<usize>),
    MatMul(Var, Var),
    /// `a * b^T`.
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    /// Matrix plus a 1×c row vector broadcast over rows.
    AddRowBroadcast(Var, Var),
    /// Matrix plus a constant matrix (mask, positional encoding, ...).
    AddConst(Var),
    Scale(Var, f64),
    AddScalar(Var),
    SoftmaxRows(Var),
    Sigmoid(Var),
    Relu(Var),
    Log(Var),
    SliceCols(Var, usize, usize),
    ConcatCols(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    MeanRows(Var),
    SumAll(Var),
    Reshape(Var),
}

struct Node {
    op: Op,
    value: Matrix,
}

/// Parameter gradients produced by [`Tape::backward`], indexed like the
/// originating [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub by_id: Vec<Matrix>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients {
            by_id: (0..store.len())
                .map(|id| {
                    let (r, c) = store.shape(id);
                    Matrix::zeros(r, c)
                })
                .collect(),
        }
    }

    /// Elementwise accumulate, used to reduce per-example gradients in a
    /// fixed order.
    pub fn add_assign(&mut self, other: &Gradients) {
        assert_eq!(self.by_id.len(), other.by_id.len());
        for (a, b) in self.by_id.iter_mut().zip(&other.by_id) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }

    pub fn scale_assign(&mut self, c: f64) {
        for g in &mut self.by_id {
            for x in &mut g.data {
                *x *= c;
            }
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: BTreeMap<usize, Var>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!((m.rows, m.cols), (1, 1), "scalar() needs a 1x1 node");
        m.data[0]
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(Op::Const, m)
    }

    /// Leaf for a trainable parameter. Repeated calls for the same id
    /// return the same node.
    pub fn param(&mut self, store: &ParamStore, id: usize) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(Op::Param(id), store.value(id).clone());
        self.param_vars.insert(id, v);
        v
    }

    /// Embedding lookup: gather `indices` rows of parameter `id`.
    pub fn gather_rows(&mut self, store: &ParamStore, id: usize, indices: &[usize]) -> Var {
        let table = store.value(id);
        let mut out = Matrix::zeros(indices.len(), table.cols);
        for (i, &ix) in indices.iter().enumerate() {
            assert!(ix < table.rows, "gather_rows index {ix} out of range");
            out.row_mut(i).copy_from_slice(table.row(ix));
        }
        self.push(Op::GatherRows(id, indices.to_vec()), out)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_nt(self.value(b));
        self.push(Op::MatMulNT(a, b), v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).add(self.value(b));
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).sub(self.value(b));
        self.push(Op::Sub(a, b), v)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!((x.rows, x.cols), (y.rows, y.cols), "hadamard dims");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect();
        let v = Matrix::from_vec(x.rows, x.cols, data);
        self.push(Op::Hadamard(a, b), v)
    }

    /// `a` (n×c) plus row vector `bias` (1×c) added to every row.
    pub fn add_row_broadcast(&mut self, a: Var, bias: Var) -> Var {
        let (x, b) = (self.value(a), self.value(bias));
        assert_eq!(b.rows, 1, "bias must be a row vector");
        assert_eq!(x.cols, b.cols, "bias width");
        let mut v = x.clone();
        for i in 0..v.rows {
            for j in 0..v.cols {
                v.data[i * v.cols + j] += b.data[j];
            }
        }
        self.push(Op::AddRowBroadcast(a, bias), v)
    }

    /// Add a non-trainable matrix (mask, positional encoding).
    pub fn add_const(&mut self, a: Var, c: &Matrix) -> Var {
        let v = self.value(a).add(c);
        self.push(Op::AddConst(a), v)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).scale(c);
        self.push(Op::Scale(a, c), v)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let x = self.value(a);
        let v = Matrix::from_vec(x.rows, x.cols, x.data.iter().map(|p| p + c).collect());
        self.push(Op::AddScalar(a), v)
    }

    /// Row-wise softmax. Panics on a fully masked row; mask builders
    /// guarantee at least one open entry per row.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        softmax_rows_in_place(&mut v).expect("softmax row fully masked");
        self.push(Op::SoftmaxRows(a), v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = x.data.iter().map(|p| 1.0 / (1.0 + (-p).exp())).collect();
        let v = Matrix::from_vec(x.rows, x.cols, data);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = x.data.iter().map(|p| p.max(0.0)).collect();
        let v = Matrix::from_vec(x.rows, x.cols, data);
        self.push(Op::Relu(a), v)
    }

    /// Elementwise natural log; inputs must be strictly positive.
    pub fn log(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = x.data.iter().map(|p| p.ln()).collect();
        let v = Matrix::from_vec(x.rows, x.cols, data);
        self.push(Op::Log(a), v)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.cols, "slice_cols out of range");
        let mut v = Matrix::zeros(x.rows, len);
        for i in 0..x.rows {
            v.row_mut(i).copy_from_slice(&x.row(i)[start..start + len]);
        }
        self.push(Op::SliceCols(a, start, len), v)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows;
        let total: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut v = Matrix::zeros(rows, total);
        let mut off = 0;
        for &p in parts {
            let x = self.value(p);
            assert_eq!(x.rows, rows, "concat_cols row mismatch");
            for i in 0..rows {
                v.row_mut(i)[off..off + x.cols].copy_from_slice(x.row(i));
            }
            off += x.cols;
        }
        self.push(Op::ConcatCols(parts.to_vec()), v)
    }

    pub fn select_rows(&mut self, a: Var, indices: &[usize]) -> Var {
        let x = self.value(a);
        let mut v = Matrix::zeros(indices.len(), x.cols);
        for (i, &ix) in indices.iter().enumerate() {
            assert!(ix < x.rows, "select_rows index out of range");
            v.row_mut(i).copy_from_slice(x.row(ix));
        }
        self.push(Op::SelectRows(a, indices.to_vec()), v)
    }

    /// Mean over rows, producing 1×c.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        assert!(x.rows > 0);
        let mut v = Matrix::zeros(1, x.cols);
        for i in 0..x.rows {
            for j in 0..x.cols {
                v.data[j] += x.get(i, j);
            }
        }
        for j in 0..x.cols {
            v.data[j] /= x.rows as f64;
        }
        self.push(Op::MeanRows(a), v)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data.iter().sum();
        self.push(Op::SumAll(a), Matrix::from_vec(1, 1, vec![s]))
    }

    /// Row-major reinterpretation with identical element order.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.rows * x.cols, rows * cols, "reshape must preserve size");
        let v = Matrix::from_vec(rows, cols, x.data.clone());
        self.push(Op::Reshape(a), v)
    }

    /// Mean squared difference against a constant target, scaled so each
    /// vector contributes its per-element mean square: sum((a-t)^2) / len.
    pub fn mse_vs_const(&mut self, a: Var, target: &Matrix) -> Var {
        let x = self.value(a);
        assert_eq!((x.rows, x.cols), (target.rows, target.cols), "mse dims");
        let n = (x.rows * x.cols) as f64;
        let neg = self.constant(target.scale(-1.0));
        let d = self.add(a, neg);
        let sq = self.hadamard(d, d);
        let s = self.sum_all(sq);
        self.scale(s, 1.0 / n)
    }

    /// Smallest |x| fed into any ReLU on this tape; infinity when no ReLU
    /// was recorded. Used to keep finite differences away from kinks.
    pub fn min_relu_input_abs(&self) -> f64 {
        let mut best = f64::INFINITY;
        for node in &self.nodes {
            if let Op::Relu(a) = node.op {
                for &x in &self.nodes[a.0].value.data {
                    best = best.min(x.abs());
                }
            }
        }
        best
    }

    /// Reverse pass from a 1×1 loss node. Returns gradients for every
    /// parameter in `store` (zeros for untouched parameters).
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Gradients {
        let lm = self.value(loss);
        assert_eq!((lm.rows, lm.cols), (1, 1), "loss must be scalar");
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::from_vec(1, 1, vec![1.0]));
        let mut out = Gradients::zeros_like(store);

        for idx in (0..self.nodes.len()).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[idx].op {
                Op::Const => {}
                Op::Param(id) => {
                    let acc = &mut out.by_id[*id];
                    for (x, y) in acc.data.iter_mut().zip(&g.data) {
                        *x += y;
                    }
                }
                Op::GatherRows(id, indices) => {
                    let acc = &mut out.by_id[*id];
                    for (i, &ix) in indices.iter().enumerate() {
                        let grow = g.row(i);
                        let arow = acc.row_mut(ix);
                        for (x, y) in arow.iter_mut().zip(grow) {
                            *x += y;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    accumulate(&mut grads, *a, g.matmul_nt(bv));
                    accumulate(&mut grads, *b, av.transpose().matmul(&g));
                }
                Op::MatMulNT(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    accumulate(&mut grads, *a, g.matmul(bv));
                    accumulate(&mut grads, *b, g.transpose().matmul(av));
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.scale(-1.0));
                }
                Op::Hadamard(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let mut ga = g.clone();
                    for (x, y) in ga.data.iter_mut().zip(&bv.data) {
                        *x *= y;
                    }
                    let mut gb = g;
                    for (x, y) in gb.data.iter_mut().zip(&av.data) {
                        *x *= y;
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRowBroadcast(a, bias) => {
                    let mut gb = Matrix::zeros(1, g.cols);
                    for i in 0..g.rows {
                        for j in 0..g.cols {
                            gb.data[j] += g.get(i, j);
                        }
                    }
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *bias, gb);
                }
                Op::AddConst(a) => accumulate(&mut grads, *a, g),
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.scale(*c)),
                Op::AddScalar(a) => accumulate(&mut grads, *a, g),
                Op::SoftmaxRows(a) => {
                    let y = &self.nodes[idx].value;
                    let mut gx = Matrix::zeros(y.rows, y.cols);
                    for i in 0..y.rows {
                        let yr = y.row(i);
                        let gr = g.row(i);
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        let out_row = gx.row_mut(i);
                        for j in 0..yr.len() {
                            out_row[j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, gx);
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[idx].value;
                    let mut gx = g;
                    for (x, s) in gx.data.iter_mut().zip(&y.data) {
                        *x *= s * (1.0 - s);
                    }
                    accumulate(&mut grads, *a, gx);
                }
                Op::Relu(a) => {
                    let x = &self.nodes[a.0].value;
                    let mut gx = g;
                    for (gv, xv) in gx.data.iter_mut().zip(&x.data) {
                        if *xv <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    accumulate(&mut grads, *a, gx);
                }
                Op::Log(a) => {
                    let x = &self.nodes[a.0].value;
                    let mut gx = g;
                    for (gv, xv) in gx.data.iter_mut().zip(&x.data) {
                        *gv /= xv;
                    }
                    accumulate(&mut grads, *a, gx);
                }
                Op::SliceCols(a, start, len) => {
                    let x = &self.nodes[a.0].value;
                    let mut gx = Matrix::zeros(x.rows, x.cols);
                    for i in 0..x.rows {
                        gx.row_mut(i)[*start..start + len].copy_from_slice(g.row(i));
                    }
                    accumulate(&mut grads, *a, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.nodes[p.0].value.cols;
                        let mut gp = Matrix::zeros(g.rows, w);
                        for i in 0..g.rows {
                            gp.row_mut(i).copy_from_slice(&g.row(i)[off..off + w]);
                        }
                        accumulate(&mut grads, p, gp);
                        off += w;
                    }
                }
                Op::SelectRows(a, indices) => {
                    let x = &self.nodes[a.0].value;
                    let mut gx = Matrix::zeros(x.rows, x.cols);
                    for (i, &ix) in indices.iter().enumerate() {
                        let grow = g.row(i);
                        let xrow = gx.row_mut(ix);
                        for (p, q) in xrow.iter_mut().zip(grow) {
                            *p += q;
                        }
                    }
                    accumulate(&mut grads, *a, gx);
                }
                Op::MeanRows(a) => {
                    let x = &self.nodes[a.0].value;
                    let scale = 1.0 / x.rows as f64;
                    let mut gx = Matrix::zeros(x.rows, x.cols);
                    for i in 0..x.rows {
                        for j in 0..x.cols {
                            gx.data[i * x.cols + j] = g.data[j] * scale;
                        }
                    }
                    accumulate(&mut grads, *a, gx);
                }
                Op::SumAll(a) => {
                    let x = &self.nodes[a.0].value;
                    let gv = g.data[0];
                    let gx = Matrix::from_vec(x.rows, x.cols, vec![gv; x.rows * x.cols]);
                    accumulate(&mut grads, *a, gx);
                }
                Op::Reshape(a) => {
                    let x = &self.nodes[a.0].value;
                    let gx = Matrix::from_vec(x.rows, x.cols, g.data.clone());
                    accumulate(&mut grads, *a, gx);
                }
            }
        }
        out
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (x, y) in acc.data.iter_mut().zip(&g.data) {
                *x += y;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
