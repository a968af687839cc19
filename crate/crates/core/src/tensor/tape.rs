//! Reverse-mode differentiation over a closed set of matrix primitives.
//!
//! A [`Tape`] is an append-only list of nodes. Every node stores its
//! forward value and the primitive that produced it; inputs always have a
//! smaller index than the node that consumes them, so the backward pass is
//! a single reverse sweep over the list. Tapes are single-writer: build one
//! per forward/backward pass.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::matrix::{dot, norm2, Matrix};
use super::ops::DEGENERATE_NORM;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Column statistics computed by [`Tape::batch_standardize`].
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (divide-by-B) variance used for normalisation.
    pub var: Vec<T>,
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// x (B x n) + r (1 x n), broadcast over rows.
    AddRow(Var, Var),
    /// x (B x n) * r (1 x n), broadcast over rows.
    MulRow(Var, Var),
    /// x (B x n) * c (B x 1), broadcast over columns.
    MulCol(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    L2NormalizeRows(Var, Vec<T>),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    BatchStandardize(Var, Vec<T>),
    RowMax(Var, Vec<usize>),
    SelectRows(Var, Vec<usize>),
    Gather(Var, Vec<(usize, usize)>),
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
    param: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar loss, keyed by parameter node.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    by_param: BTreeMap<Var, Matrix<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.by_param.get(&v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Matrix<T>)> {
        self.by_param.iter().map(|(&v, g)| (v, g))
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.by_param.values().all(Matrix::all_finite)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf whose gradient is reported by [`Tape::backward`].
    pub fn param(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn is_param(&self, v: Var) -> bool {
        self.nodes[v.0].param
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>, param: bool) -> Var {
        self.nodes.push(Node { value, op, param });
        Var(self.nodes.len() - 1)
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Shape { op, left: self.shape(a), right: self.shape(b) }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b), false))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a), false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b), false))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(value, Op::Sub(a, b), false))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(value, Op::Mul(a, b), false))
    }

    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xs, rs) = (self.shape(x), self.shape(row));
        if rs != (1, xs.1) {
            return Err(self.shape_err("add_row", x, row));
        }
        let r = self.value(row).data().to_vec();
        let value = Matrix::from_fn(xs.0, xs.1, |i, j| self.value(x)[(i, j)] + r[j]);
        Ok(self.push(value, Op::AddRow(x, row), false))
    }

    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xs, rs) = (self.shape(x), self.shape(row));
        if rs != (1, xs.1) {
            return Err(self.shape_err("mul_row", x, row));
        }
        let r = self.value(row).data().to_vec();
        let value = Matrix::from_fn(xs.0, xs.1, |i, j| self.value(x)[(i, j)] * r[j]);
        Ok(self.push(value, Op::MulRow(x, row), false))
    }

    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let (xs, cs) = (self.shape(x), self.shape(col));
        if cs != (xs.0, 1) {
            return Err(self.shape_err("mul_col", x, col));
        }
        let c = self.value(col).data().to_vec();
        let value = Matrix::from_fn(xs.0, xs.1, |i, j| self.value(x)[(i, j)] * c[i]);
        Ok(self.push(value, Op::MulCol(x, col), false))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let value = self.value(x).scale(s);
        self.push(value, Op::Scale(x, s), false)
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Var {
        let value = self.value(x).map(|v| v + s);
        self.push(value, Op::AddScalar(x), false)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(T::zero()));
        self.push(value, Op::Relu(x), false)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(T::tanh);
        self.push(value, Op::Tanh(x), false)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.value(x).map(T::exp);
        self.push(value, Op::Exp(x), false)
    }

    pub fn log(&mut self, x: Var) -> Var {
        let value = self.value(x).map(T::ln);
        self.push(value, Op::Log(x), false)
    }

    /// Square root. The derivative at exactly zero is taken as zero.
    pub fn sqrt(&mut self, x: Var) -> Var {
        let value = self.value(x).map(T::sqrt);
        self.push(value, Op::Sqrt(x), false)
    }

    /// Sum of all entries, as a 1x1 node.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Matrix::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x), false)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let value = Matrix::scalar(v.sum() / T::lit(v.len() as f64));
        self.push(value, Op::Mean(x), false)
    }

    /// Per-row sum, B x n -> B x 1.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let value = Matrix::col_vector(&self.value(x).row_sums());
        self.push(value, Op::RowSum(x), false)
    }

    /// Scales every row to unit Euclidean norm.
    ///
    /// Fails on any row whose norm is below 1e-12; callers are expected to
    /// drop such rows before recording the op.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        let mut norms = Vec::with_capacity(src.rows());
        for (i, row) in src.iter_rows().enumerate() {
            let n = norm2(row);
            if !(n >= T::lit(DEGENERATE_NORM)) {
                return Err(Error::DegenerateVector {
                    context: format!("l2_normalize_rows, row {i}"),
                    norm: n.to_f64_lossy(),
                });
            }
            norms.push(n);
        }
        let value = Matrix::from_fn(src.rows(), src.cols(), |i, j| src[(i, j)] / norms[i]);
        Ok(self.push(value, Op::L2NormalizeRows(x, norms), false))
    }

    /// Row-wise max-shifted softmax.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let mut value = Matrix::zeros(src.rows(), src.cols());
        for i in 0..src.rows() {
            value.row_mut(i).copy_from_slice(&super::ops::softmax(src.row(i)));
        }
        self.push(value, Op::SoftmaxRows(x), false)
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let mut value = Matrix::zeros(src.rows(), src.cols());
        for i in 0..src.rows() {
            value.row_mut(i).copy_from_slice(&super::ops::log_softmax(src.row(i)));
        }
        self.push(value, Op::LogSoftmaxRows(x), false)
    }

    /// Standardises each column with its batch mean and biased variance.
    pub fn batch_standardize(&mut self, x: Var, eps: T) -> Result<(Var, BatchStats<T>)> {
        let src = self.value(x);
        let (b, n) = src.shape();
        if b < 2 {
            return Err(Error::invalid(format!("batch statistics need at least 2 rows, got {b}")));
        }
        let bt = T::lit(b as f64);
        let mean: Vec<T> = src.col_sums().into_iter().map(|s| s / bt).collect();
        let mut var = vec![T::zero(); n];
        for row in src.iter_rows() {
            for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        for v in var.iter_mut() {
            *v /= bt;
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let value = Matrix::from_fn(b, n, |i, j| (src[(i, j)] - mean[j]) * inv_std[j]);
        let var_out = self.push(value, Op::BatchStandardize(x, inv_std), false);
        Ok((var_out, BatchStats { mean, var }))
    }

    /// Row maximum over the allowed columns of each row, B x n -> B x 1.
    ///
    /// Ties pick the lowest column index; the gradient flows only to the
    /// selected entry.
    pub fn row_max_over(&mut self, x: Var, allowed: &[Vec<usize>]) -> Result<Var> {
        let src = self.value(x);
        if allowed.len() != src.rows() {
            return Err(Error::invalid(format!("row_max_over: {} column sets for {} rows", allowed.len(), src.rows())));
        }
        let mut picks = Vec::with_capacity(src.rows());
        let mut out = Vec::with_capacity(src.rows());
        for (i, cols) in allowed.iter().enumerate() {
            let mut best: Option<usize> = None;
            for &c in cols {
                if c >= src.cols() {
                    return Err(Error::invalid(format!("row_max_over: column {c} out of range")));
                }
                match best {
                    Some(b) if src[(i, c)] < src[(i, b)] => {}
                    Some(b) if src[(i, c)] == src[(i, b)] && c > b => {}
                    _ => best = Some(c),
                }
            }
            let c = best.ok_or_else(|| Error::invalid(format!("row_max_over: row {i} has no allowed columns")))?;
            picks.push(c);
            out.push(src[(i, c)]);
        }
        Ok(self.push(Matrix::col_vector(&out), Op::RowMax(x, picks), false))
    }

    /// Row maximum over every column.
    pub fn row_max(&mut self, x: Var) -> Var {
        let (rows, cols) = self.shape(x);
        let all: Vec<Vec<usize>> = (0..rows).map(|_| (0..cols).collect()).collect();
        self.row_max_over(x, &all).expect("full column sets are always valid")
    }

    /// Sub-matrix made of the listed rows.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let src = self.value(x);
        if let Some(&r) = rows.iter().find(|&&r| r >= src.rows()) {
            return Err(Error::invalid(format!("select_rows: row {r} out of range for {} rows", src.rows())));
        }
        let value = src.select_rows(rows);
        Ok(self.push(value, Op::SelectRows(x, rows.to_vec()), false))
    }

    /// Picks individual entries into an n x 1 column.
    pub fn gather(&mut self, x: Var, entries: &[(usize, usize)]) -> Result<Var> {
        let src = self.value(x);
        let (r, c) = src.shape();
        if let Some(&bad) = entries.iter().find(|&&(i, j)| i >= r || j >= c) {
            return Err(Error::invalid(format!("gather: entry {bad:?} out of range for {r}x{c}")));
        }
        let vals: Vec<T> = entries.iter().map(|&(i, j)| src[(i, j)]).collect();
        Ok(self.push(Matrix::col_vector(&vals), Op::Gather(x, entries.to_vec()), false))
    }

    /// Gradients of a 1x1 `loss` with respect to every parameter leaf.
    ///
    /// Parameters the loss does not depend on get a zero gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let (rows, cols) = self.shape(loss);
        if (rows, cols) != (1, 1) {
            return Err(Error::NonScalarLoss { rows, cols });
        }
        let mut adj: Vec<Option<Matrix<T>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Matrix::scalar(T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if node.param {
                adj[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut adj);
        }

        let mut by_param = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.param {
                let g = adj
                    .get_mut(i)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Matrix::zeros(node.value.rows(), node.value.cols()));
                by_param.insert(Var(i), g);
            }
        }
        Ok(Gradients { by_param })
    }

    fn propagate(&self, i: usize, g: &Matrix<T>, adj: &mut [Option<Matrix<T>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let accumulate = |adj: &mut [Option<Matrix<T>>], v: Var, d: Matrix<T>| match &mut adj[v.0] {
            Some(acc) => acc.axpy(T::one(), &d).expect("adjoint shapes agree"),
            slot @ None => *slot = Some(d),
        };
        let val = |v: Var| &self.nodes[v.0].value;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let da = g.matmul_transposed(val(*b)).expect("matmul backward shapes");
                let db = val(*a).transpose().matmul(g).expect("matmul backward shapes");
                accumulate(adj, *a, da);
                accumulate(adj, *b, db);
            }
            Op::Transpose(a) => accumulate(adj, *a, g.transpose()),
            Op::Add(a, b) => {
                accumulate(adj, *a, g.clone());
                accumulate(adj, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(adj, *a, g.clone());
                accumulate(adj, *b, g.scale(-T::one()));
            }
            Op::Mul(a, b) => {
                accumulate(adj, *a, g.hadamard(val(*b)).expect("same shape"));
                accumulate(adj, *b, g.hadamard(val(*a)).expect("same shape"));
            }
            Op::AddRow(x, r) => {
                accumulate(adj, *x, g.clone());
                accumulate(adj, *r, Matrix::row_vector(&g.col_sums()));
            }
            Op::MulRow(x, r) => {
                let rv = val(*r).data();
                let dx = Matrix::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] * rv[j]);
                let dr = g.hadamard(val(*x)).expect("same shape").col_sums();
                accumulate(adj, *x, dx);
                accumulate(adj, *r, Matrix::row_vector(&dr));
            }
            Op::MulCol(x, c) => {
                let cv = val(*c).data();
                let dx = Matrix::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] * cv[i]);
                let dc = g.hadamard(val(*x)).expect("same shape").row_sums();
                accumulate(adj, *x, dx);
                accumulate(adj, *c, Matrix::col_vector(&dc));
            }
            Op::Scale(x, s) => accumulate(adj, *x, g.scale(*s)),
            Op::AddScalar(x) => accumulate(adj, *x, g.clone()),
            Op::Relu(x) => {
                let d = g
                    .zip_map(val(*x), "relu", |gi, xi| if xi > T::zero() { gi } else { T::zero() })
                    .expect("same shape");
                accumulate(adj, *x, d);
            }
            Op::Tanh(x) => {
                let d = g.zip_map(y, "tanh", |gi, yi| gi * (T::one() - yi * yi)).expect("same shape");
                accumulate(adj, *x, d);
            }
            Op::Exp(x) => accumulate(adj, *x, g.hadamard(y).expect("same shape")),
            Op::Log(x) => {
                let d = g.zip_map(val(*x), "log", |gi, xi| gi / xi).expect("same shape");
                accumulate(adj, *x, d);
            }
            Op::Sqrt(x) => {
                let half = T::lit(0.5);
                let d = g
                    .zip_map(y, "sqrt", |gi, yi| if yi > T::zero() { gi * half / yi } else { T::zero() })
                    .expect("same shape");
                accumulate(adj, *x, d);
            }
            Op::Sum(x) => {
                let (r, c) = val(*x).shape();
                accumulate(adj, *x, Matrix::filled(r, c, g.data()[0]));
            }
            Op::Mean(x) => {
                let (r, c) = val(*x).shape();
                let s = g.data()[0] / T::lit((r * c) as f64);
                accumulate(adj, *x, Matrix::filled(r, c, s));
            }
            Op::RowSum(x) => {
                let (r, c) = val(*x).shape();
                accumulate(adj, *x, Matrix::from_fn(r, c, |i, _| g[(i, 0)]));
            }
            Op::L2NormalizeRows(x, norms) => {
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let yr = y.row(i);
                    let gr = g.row(i);
                    let proj = dot(yr, gr);
                    for (j, o) in d.row_mut(i).iter_mut().enumerate() {
                        *o = (gr[j] - yr[j] * proj) / norms[i];
                    }
                }
                accumulate(adj, *x, d);
            }
            Op::SoftmaxRows(x) => {
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let yr = y.row(i);
                    let gr = g.row(i);
                    let proj = dot(yr, gr);
                    for (j, o) in d.row_mut(i).iter_mut().enumerate() {
                        *o = yr[j] * (gr[j] - proj);
                    }
                }
                accumulate(adj, *x, d);
            }
            Op::LogSoftmaxRows(x) => {
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let yr = y.row(i);
                    let gr = g.row(i);
                    let gsum = gr.iter().fold(T::zero(), |a, &v| a + v);
                    for (j, o) in d.row_mut(i).iter_mut().enumerate() {
                        *o = gr[j] - yr[j].exp() * gsum;
                    }
                }
                accumulate(adj, *x, d);
            }
            Op::BatchStandardize(x, inv_std) => {
                let (b, n) = y.shape();
                let bt = T::lit(b as f64);
                let g_mean: Vec<T> = g.col_sums().into_iter().map(|s| s / bt).collect();
                let gy_mean: Vec<T> =
                    g.hadamard(y).expect("same shape").col_sums().into_iter().map(|s| s / bt).collect();
                let d = Matrix::from_fn(b, n, |i, j| inv_std[j] * (g[(i, j)] - g_mean[j] - y[(i, j)] * gy_mean[j]));
                accumulate(adj, *x, d);
            }
            Op::RowMax(x, picks) => {
                let (r, c) = val(*x).shape();
                let mut d = Matrix::zeros(r, c);
                for (i, &j) in picks.iter().enumerate() {
                    d[(i, j)] = g[(i, 0)];
                }
                accumulate(adj, *x, d);
            }
            Op::SelectRows(x, rows) => {
                let (r, c) = val(*x).shape();
                let mut d = Matrix::zeros(r, c);
                for (k, &src) in rows.iter().enumerate() {
                    for (o, &gv) in d.row_mut(src).iter_mut().zip(g.row(k)) {
                        *o += gv;
                    }
                }
                accumulate(adj, *x, d);
            }
            Op::Gather(x, entries) => {
                let (r, c) = val(*x).shape();
                let mut d = Matrix::zeros(r, c);
                for (k, &(i, j)) in entries.iter().enumerate() {
                    d[(i, j)] += g[(k, 0)];
                }
                accumulate(adj, *x, d);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_diff_grad, relative_error, Rng};

    fn random(rng: &mut Rng, r: usize, c: usize) -> Matrix<f64> {
        Matrix::from_fn(r, c, |_, _| rng.normal())
    }

    /// Checks the tape gradient of `build` against central differences on
    /// every entry of every parameter.
    fn check(params: Vec<Matrix<f64>>, build: impl Fn(&mut Tape<f64>, &[Var]) -> Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
        let loss = build(&mut tape, &vars);
        let grads = tape.backward(loss).unwrap();

        let flat: Vec<f64> = params.iter().flat_map(|p| p.data().to_vec()).collect();
        let f = |x: &[f64]| {
            let mut t = Tape::new();
            let mut off = 0;
            let vs: Vec<Var> = params
                .iter()
                .map(|p| {
                    let m = Matrix::new(p.rows(), p.cols(), x[off..off + p.len()].to_vec()).unwrap();
                    off += p.len();
                    t.param(m)
                })
                .collect();
            let l = build(&mut t, &vs);
            t.value(l).item().unwrap()
        };
        let numeric = finite_diff_grad(f, &flat, 1e-5);
        let analytic: Vec<f64> = vars.iter().flat_map(|v| grads.get(*v).unwrap().data().to_vec()).collect();
        let err = relative_error(&analytic, &numeric);
        assert!(err <= 1e-5, "relative error {err:e}\nanalytic {analytic:?}\nnumeric {numeric:?}");
    }

    #[test]
    fn sum_gives_all_ones() {
        let mut tape = Tape::new();
        let p = tape.param(Matrix::row_vector(&[1.0, -2.0, 3.0]));
        let s = tape.sum(p);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(p).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn half_squared_norm_gives_p() {
        let mut tape = Tape::new();
        let pv = [0.5, -1.5, 2.0];
        let p = tape.param(Matrix::row_vector(&pv));
        let sq = tape.mul(p, p).unwrap();
        let s = tape.sum(sq);
        let l = tape.scale(s, 0.5);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(p).unwrap().data(), &pv);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let p = tape.param(Matrix::zeros(2, 2));
        assert!(matches!(tape.backward(p), Err(Error::NonScalarLoss { rows: 2, cols: 2 })));
    }

    #[test]
    fn constants_are_skipped_and_unused_params_get_zeros() {
        let mut tape = Tape::new();
        let c = tape.constant(Matrix::row_vector(&[1.0, 2.0]));
        let p = tape.param(Matrix::row_vector(&[3.0, 4.0]));
        let unused = tape.param(Matrix::scalar(7.0));
        let m = tape.mul(c, p).unwrap();
        let s = tape.sum(m);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.get(p).unwrap().data(), &[1.0, 2.0]);
        assert_eq!(g.get(unused).unwrap().data(), &[0.0]);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn gradcheck_matmul_transpose_and_broadcasts() {
        let mut rng = Rng::new(1);
        let params = vec![
            random(&mut rng, 3, 4),
            random(&mut rng, 2, 4),
            random(&mut rng, 1, 2),
            random(&mut rng, 1, 2),
            random(&mut rng, 3, 1),
        ];
        check(params, |t, v| {
            let wt = t.transpose(v[1]);
            let z = t.matmul(v[0], wt).unwrap();
            let z = t.mul_row(z, v[2]).unwrap();
            let z = t.add_row(z, v[3]).unwrap();
            let z = t.mul_col(z, v[4]).unwrap();
            let z = t.tanh(z);
            t.mean(z)
        });
    }

    #[test]
    fn gradcheck_normalize_softmax_logsoftmax() {
        let mut rng = Rng::new(2);
        let params = vec![random(&mut rng, 4, 5), random(&mut rng, 4, 5)];
        check(params, |t, v| {
            let n = t.l2_normalize_rows(v[0]).unwrap();
            let p = t.softmax_rows(v[1]);
            let lp = t.log_softmax_rows(v[1]);
            let a = t.mul(n, p).unwrap();
            let b = t.mul(a, lp).unwrap();
            let e = t.exp(b);
            t.sum(e)
        });
    }

    #[test]
    fn gradcheck_batch_standardize() {
        let mut rng = Rng::new(3);
        let params = vec![random(&mut rng, 6, 3), random(&mut rng, 6, 3)];
        check(params, |t, v| {
            let (s, _) = t.batch_standardize(v[0], 1e-5).unwrap();
            let m = t.mul(s, v[1]).unwrap();
            let r = t.relu(m);
            t.sum(r)
        });
    }

    #[test]
    fn gradcheck_selection_ops_sqrt_log() {
        let mut rng = Rng::new(4);
        let x = Matrix::from_fn(3, 4, |_, _| rng.uniform_range(0.5, 2.0));
        check(vec![x], |t, v| {
            let sel = t.select_rows(v[0], &[2, 0, 2]).unwrap();
            let mx = t.row_max_over(sel, &[vec![0, 1], vec![1, 3], vec![2, 3]]).unwrap();
            let g = t.gather(v[0], &[(0, 0), (1, 2), (2, 3), (1, 2)]).unwrap();
            let s = t.sqrt(g);
            let l = t.log(mx);
            let rs = t.row_sum(sel);
            let a = t.sum(s);
            let b = t.sum(l);
            let c = t.sum(rs);
            let ab = t.add(a, b).unwrap();
            let abc = t.sub(ab, c).unwrap();
            t.add_scalar(abc, 1.0)
        });
    }

    #[test]
    fn row_max_ties_pick_lowest_index() {
        let mut tape = Tape::new();
        let x = tape.param(Matrix::row_vector(&[1.0, 3.0, 3.0]));
        let m = tape.row_max(x);
        let s = tape.sum(m);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn batch_standardize_needs_two_rows() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Matrix::zeros(1, 3));
        assert!(tape.batch_standardize(x, 1e-5).is_err());
    }

    #[test]
    fn degenerate_row_is_reported() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap());
        let err = tape.l2_normalize_rows(x).unwrap_err();
        assert!(err.to_string().contains("row 1"));
    }
}
