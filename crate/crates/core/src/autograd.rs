//! Dense `f64` matrices and a small reverse-mode automatic differentiation tape.
//!
//! Every learnable component of the model is expressed as a sequence of [`Var`]
//! operations recorded on a [`Tape`]. Forward values are computed eagerly by the
//! same [`Matrix`] routines that the non-differentiable code paths use, so a
//! forward pass on the tape is bit-identical to the equivalent plain computation.

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length mismatch");
        Self { rows, cols, data }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Self::from_vec(1, data.len(), data)
    }

    pub fn column_vector(data: Vec<f64>) -> Self {
        Self::from_vec(data.len(), 1, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Square matrix of ones with a zero diagonal.
    pub fn off_diagonal_ones(n: usize) -> Self {
        let mut m = Self::filled(n, n, 1.0);
        for i in 0..n {
            m.data[i * n + i] = 0.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn scalar(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "not a scalar");
        self.data[0]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        assert_eq!(self.shape(), other.shape(), "shape mismatch in elementwise op");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix) -> Matrix {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, other.rows,
            "matmul shape mismatch: {:?} x {:?}",
            self.shape(),
            other.shape()
        );
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let out_row = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * m..(p + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Matrix::from_vec(n, m, out)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&self) -> Matrix {
        let mut out = self.clone();
        for i in 0..self.rows {
            let row = &mut out.data[i * self.cols..(i + 1) * self.cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    DivCol(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Sigmoid(usize),
    Relu(usize),
    LeakyRelu(usize, f64),
    Exp(usize),
    Log(usize),
    Square(usize),
    Clamp(usize, f64, f64),
    SoftmaxRows(usize),
    LayerNormRows(usize, Vec<f64>),
    Sum(usize),
    SumRows(usize),
    SumCols(usize),
    ConcatCols(usize, usize),
    SliceCols(usize, usize),
    RepeatRows(usize),
    Reshape(usize),
    Permute(usize, Vec<usize>),
    Diag(usize),
}

struct Node {
    value: Matrix,
    op: Op,
    tracked: bool,
}

/// Records operations for reverse-mode differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).finish()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by variable.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Matrix> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var<'_>) -> Option<Matrix> {
        self.grads.get_mut(var.id).and_then(|g| g.take())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Matrix, op: Op, tracked: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, tracked });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A leaf whose gradient is accumulated by [`Tape::backward`].
    pub fn param(&self, value: Matrix) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&self, value: Matrix) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Matrix::from_vec(1, 1, vec![value]))
    }

    fn tracked(&self, id: usize) -> bool {
        self.nodes.borrow()[id].tracked
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, output: Var<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[output.id].value.len(), 1, "backward requires a scalar output");
        let mut grads: Vec<Option<Matrix>> = vec![None; output.id + 1];
        grads[output.id] = Some(Matrix::filled(1, 1, 1.0));

        for id in (0..=output.id).rev() {
            if !nodes[id].tracked {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            let mut out: Vec<(usize, Matrix)> = Vec::with_capacity(2);
            let mut send = |target: usize, delta: Matrix| {
                if nodes[target].tracked {
                    out.push((target, delta));
                }
            };
            let val = |i: usize| &nodes[i].value;
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Sub(a, b) => {
                    send(*a, g.clone());
                    send(*b, g.scale(-1.0));
                }
                Op::Mul(a, b) => {
                    send(*a, g.hadamard(val(*b)));
                    send(*b, g.hadamard(val(*a)));
                }
                Op::AddRow(a, r) => {
                    send(*r, column_sums(&g));
                    send(*a, g);
                }
                Op::MulRow(a, r) => {
                    let row = val(*r);
                    let ga = Matrix::from_fn(g.rows, g.cols, |i, j| g.get(i, j) * row.data[j]);
                    let gr = column_sums(&g.hadamard(val(*a)));
                    send(*a, ga);
                    send(*r, gr);
                }
                Op::DivCol(a, c) => {
                    let col = val(*c);
                    let av = val(*a);
                    let ga = Matrix::from_fn(g.rows, g.cols, |i, j| g.get(i, j) / col.data[i]);
                    let gc = Matrix::from_fn(col.rows, 1, |i, _| {
                        let ci = col.data[i];
                        -(0..g.cols).map(|j| g.get(i, j) * av.get(i, j)).sum::<f64>() / (ci * ci)
                    });
                    send(*a, ga);
                    send(*c, gc);
                }
                Op::Scale(a, s) => send(*a, g.scale(*s)),
                Op::AddScalar(a) => send(*a, g),
                Op::MatMul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    if nodes[*a].tracked {
                        send(*a, g.matmul(&bv.transpose()));
                    }
                    if nodes[*b].tracked {
                        send(*b, av.transpose().matmul(&g));
                    }
                }
                Op::Transpose(a) => send(*a, g.transpose()),
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    send(*a, g.zip_map(y, |gi, yi| gi * yi * (1.0 - yi)));
                }
                Op::Relu(a) => {
                    send(*a, g.zip_map(val(*a), |gi, x| if x > 0.0 { gi } else { 0.0 }));
                }
                Op::LeakyRelu(a, slope) => {
                    let s = *slope;
                    send(*a, g.zip_map(val(*a), |gi, x| if x > 0.0 { gi } else { gi * s }));
                }
                Op::Exp(a) => send(*a, g.hadamard(&node.value)),
                Op::Log(a) => send(*a, g.zip_map(val(*a), |gi, x| gi / x)),
                Op::Square(a) => send(*a, g.zip_map(val(*a), |gi, x| 2.0 * gi * x)),
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    send(
                        *a,
                        g.zip_map(val(*a), |gi, x| if x >= lo && x <= hi { gi } else { 0.0 }),
                    );
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Matrix::zeros(y.rows, y.cols);
                    for i in 0..y.rows {
                        let dot: f64 = (0..y.cols).map(|j| g.get(i, j) * y.get(i, j)).sum();
                        for j in 0..y.cols {
                            ga.set(i, j, y.get(i, j) * (g.get(i, j) - dot));
                        }
                    }
                    send(*a, ga);
                }
                Op::LayerNormRows(a, inv_std) => {
                    let y = &node.value;
                    let c = y.cols as f64;
                    let mut ga = Matrix::zeros(y.rows, y.cols);
                    for i in 0..y.rows {
                        let mean_g: f64 = (0..y.cols).map(|j| g.get(i, j)).sum::<f64>() / c;
                        let mean_gy: f64 =
                            (0..y.cols).map(|j| g.get(i, j) * y.get(i, j)).sum::<f64>() / c;
                        for j in 0..y.cols {
                            ga.set(
                                i,
                                j,
                                inv_std[i] * (g.get(i, j) - mean_g - y.get(i, j) * mean_gy),
                            );
                        }
                    }
                    send(*a, ga);
                }
                Op::Sum(a) => {
                    let (r, c) = val(*a).shape();
                    send(*a, Matrix::filled(r, c, g.data[0]));
                }
                Op::SumRows(a) => {
                    let (r, c) = val(*a).shape();
                    send(*a, Matrix::from_fn(r, c, |i, _| g.data[i]));
                }
                Op::SumCols(a) => {
                    let (r, c) = val(*a).shape();
                    send(*a, Matrix::from_fn(r, c, |_, j| g.data[j]));
                }
                Op::ConcatCols(a, b) => {
                    let ca = val(*a).cols;
                    let cb = val(*b).cols;
                    send(*a, Matrix::from_fn(g.rows, ca, |i, j| g.get(i, j)));
                    send(*b, Matrix::from_fn(g.rows, cb, |i, j| g.get(i, ca + j)));
                }
                Op::SliceCols(a, start) => {
                    let (r, c) = val(*a).shape();
                    let s = *start;
                    let w = g.cols;
                    send(
                        *a,
                        Matrix::from_fn(r, c, |i, j| {
                            if j >= s && j < s + w {
                                g.get(i, j - s)
                            } else {
                                0.0
                            }
                        }),
                    );
                }
                Op::RepeatRows(a) => send(*a, column_sums(&g)),
                Op::Reshape(a) => {
                    let (r, c) = val(*a).shape();
                    send(*a, Matrix::from_vec(r, c, g.data));
                }
                Op::Permute(a, perm) => {
                    let (r, c) = val(*a).shape();
                    let mut ga = Matrix::zeros(r, c);
                    for (out_idx, &src) in perm.iter().enumerate() {
                        ga.data[src] += g.data[out_idx];
                    }
                    send(*a, ga);
                }
                Op::Diag(a) => {
                    let n = val(*a).rows;
                    let mut ga = Matrix::zeros(n, n);
                    for i in 0..n {
                        ga.set(i, i, g.data[i]);
                    }
                    send(*a, ga);
                }
            }
            for (target, delta) in out {
                match &mut grads[target] {
                    Some(acc) => acc.add_assign(&delta),
                    slot @ None => *slot = Some(delta),
                }
            }
        }
        Gradients { grads }
    }
}

fn column_sums(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, m.cols);
    for i in 0..m.rows {
        for j in 0..m.cols {
            out.data[j] += m.get(i, j);
        }
    }
    out
}

impl<'t> Var<'t> {
    pub fn id(self) -> usize {
        self.id
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    pub fn value(self) -> Matrix {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn with_value<R>(self, f: impl FnOnce(&Matrix) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn scalar_value(self) -> f64 {
        self.with_value(|m| m.scalar())
    }

    pub fn shape(self) -> (usize, usize) {
        self.with_value(|m| m.shape())
    }

    fn unary(self, op: Op, f: impl FnOnce(&Matrix) -> Matrix) -> Var<'t> {
        let value = self.with_value(f);
        let tracked = self.tape.tracked(self.id);
        self.tape.push(value, op, tracked)
    }

    fn binary(self, other: Var<'t>, op: Op, f: impl FnOnce(&Matrix, &Matrix) -> Matrix) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            f(&nodes[self.id].value, &nodes[other.id].value)
        };
        let tracked = self.tape.tracked(self.id) || self.tape.tracked(other.id);
        self.tape.push(value, op, tracked)
    }

    pub fn add(self, o: Var<'t>) -> Var<'t> {
        self.binary(o, Op::Add(self.id, o.id), |a, b| a.add(b))
    }

    pub fn sub(self, o: Var<'t>) -> Var<'t> {
        self.binary(o, Op::Sub(self.id, o.id), |a, b| a.sub(b))
    }

    pub fn mul(self, o: Var<'t>) -> Var<'t> {
        self.binary(o, Op::Mul(self.id, o.id), |a, b| a.hadamard(b))
    }

    /// Adds a `1×c` row to every row.
    pub fn add_row(self, row: Var<'t>) -> Var<'t> {
        self.binary(row, Op::AddRow(self.id, row.id), |a, r| {
            assert_eq!((1, a.cols), r.shape(), "add_row shape mismatch");
            Matrix::from_fn(a.rows, a.cols, |i, j| a.get(i, j) + r.data[j])
        })
    }

    /// Multiplies every row elementwise by a `1×c` row.
    pub fn mul_row(self, row: Var<'t>) -> Var<'t> {
        self.binary(row, Op::MulRow(self.id, row.id), |a, r| {
            assert_eq!((1, a.cols), r.shape(), "mul_row shape mismatch");
            Matrix::from_fn(a.rows, a.cols, |i, j| a.get(i, j) * r.data[j])
        })
    }

    /// Divides row `i` by entry `i` of an `r×1` column.
    pub fn div_col(self, col: Var<'t>) -> Var<'t> {
        self.binary(col, Op::DivCol(self.id, col.id), |a, c| {
            assert_eq!((a.rows, 1), c.shape(), "div_col shape mismatch");
            Matrix::from_fn(a.rows, a.cols, |i, j| a.get(i, j) / c.data[i])
        })
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, s), |a| a.scale(s))
    }

    pub fn add_scalar(self, s: f64) -> Var<'t> {
        self.unary(Op::AddScalar(self.id), |a| a.map(|v| v + s))
    }

    pub fn matmul(self, o: Var<'t>) -> Var<'t> {
        self.binary(o, Op::MatMul(self.id, o.id), |a, b| a.matmul(b))
    }

    pub fn t(self) -> Var<'t> {
        self.unary(Op::Transpose(self.id), |a| a.transpose())
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), |a| a.map(sigmoid))
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |a| a.map(|v| v.max(0.0)))
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        self.unary(Op::LeakyRelu(self.id, slope), |a| {
            a.map(|v| if v > 0.0 { v } else { v * slope })
        })
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.id), |a| a.map(f64::exp))
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(Op::Log(self.id), |a| a.map(f64::ln))
    }

    pub fn square(self) -> Var<'t> {
        self.unary(Op::Square(self.id), |a| a.map(|v| v * v))
    }

    /// Elementwise clamp; the gradient passes only inside `[lo, hi]`.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(Op::Clamp(self.id, lo, hi), |a| a.map(|v| v.clamp(lo, hi)))
    }

    pub fn softmax_rows(self) -> Var<'t> {
        self.unary(Op::SoftmaxRows(self.id), |a| a.softmax_rows())
    }

    /// Row-wise standardization without affine parameters.
    pub fn layer_norm_rows(self, eps: f64) -> Var<'t> {
        let (value, inv_std) = self.with_value(|a| {
            let c = a.cols as f64;
            let mut out = a.clone();
            let mut inv = Vec::with_capacity(a.rows);
            for i in 0..a.rows {
                let row = a.row(i);
                let mean = row.iter().sum::<f64>() / c;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
                let s = 1.0 / (var + eps).sqrt();
                for j in 0..a.cols {
                    out.set(i, j, (row[j] - mean) * s);
                }
                inv.push(s);
            }
            (out, inv)
        });
        let tracked = self.tape.tracked(self.id);
        self.tape
            .push(value, Op::LayerNormRows(self.id, inv_std), tracked)
    }

    pub fn sum(self) -> Var<'t> {
        self.unary(Op::Sum(self.id), |a| Matrix::from_vec(1, 1, vec![a.sum()]))
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.with_value(|a| a.len()) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sums across columns, giving an `r×1` column.
    pub fn sum_rows(self) -> Var<'t> {
        self.unary(Op::SumRows(self.id), |a| {
            Matrix::from_fn(a.rows, 1, |i, _| a.row(i).iter().sum())
        })
    }

    /// Sums down rows, giving a `1×c` row.
    pub fn sum_cols(self) -> Var<'t> {
        self.unary(Op::SumCols(self.id), column_sums)
    }

    pub fn concat_cols(self, o: Var<'t>) -> Var<'t> {
        self.binary(o, Op::ConcatCols(self.id, o.id), |a, b| {
            assert_eq!(a.rows, b.rows, "concat_cols row mismatch");
            Matrix::from_fn(a.rows, a.cols + b.cols, |i, j| {
                if j < a.cols {
                    a.get(i, j)
                } else {
                    b.get(i, j - a.cols)
                }
            })
        })
    }

    pub fn slice_cols(self, start: usize, width: usize) -> Var<'t> {
        self.unary(Op::SliceCols(self.id, start), |a| {
            assert!(start + width <= a.cols, "slice_cols out of range");
            Matrix::from_fn(a.rows, width, |i, j| a.get(i, start + j))
        })
    }

    /// Broadcasts a `1×c` row to `rows` rows.
    pub fn repeat_rows(self, rows: usize) -> Var<'t> {
        self.unary(Op::RepeatRows(self.id), |a| {
            assert_eq!(a.rows, 1, "repeat_rows expects a row vector");
            Matrix::from_fn(rows, a.cols, |_, j| a.data[j])
        })
    }

    pub fn reshape(self, rows: usize, cols: usize) -> Var<'t> {
        self.unary(Op::Reshape(self.id), |a| Matrix::from_vec(rows, cols, a.data.clone()))
    }

    /// Sorts all entries in descending order, keeping the input's shape.
    pub fn sort_desc(self) -> Var<'t> {
        let (value, perm) = self.with_value(|a| {
            let mut perm: Vec<usize> = (0..a.len()).collect();
            perm.sort_by(|&x, &y| a.data[y].total_cmp(&a.data[x]));
            let data = perm.iter().map(|&p| a.data[p]).collect();
            (Matrix::from_vec(a.rows, a.cols, data), perm)
        });
        let tracked = self.tape.tracked(self.id);
        self.tape.push(value, Op::Permute(self.id, perm), tracked)
    }

    /// Diagonal of a square matrix as an `n×1` column.
    pub fn diag(self) -> Var<'t> {
        self.unary(Op::Diag(self.id), |a| {
            assert_eq!(a.rows, a.cols, "diag expects a square matrix");
            Matrix::from_fn(a.rows, 1, |i, _| a.get(i, i))
        })
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central differences of `f` with respect to every entry of `x`.
    fn numeric_grad(x: &Matrix, f: impl Fn(&Matrix) -> f64) -> Matrix {
        let h = 1e-6;
        let mut g = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            g.data_mut()[i] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn check(x: Matrix, build: impl for<'t> Fn(Var<'t>) -> Var<'t>) {
        let f = |m: &Matrix| {
            let tape = Tape::new();
            let v = tape.param(m.clone());
            build(v).scalar_value()
        };
        let tape = Tape::new();
        let v = tape.param(x.clone());
        let out = build(v);
        let grads = tape.backward(out);
        let analytic = grads.get(v).unwrap().clone();
        let numeric = numeric_grad(&x, f);
        let err = analytic.max_abs_diff(&numeric);
        assert!(err < 1e-6, "gradient mismatch {err}: {analytic:?} vs {numeric:?}");
    }

    fn sample() -> Matrix {
        Matrix::from_vec(2, 3, vec![0.3, -1.2, 0.7, 1.5, 0.1, -0.4])
    }

    #[test]
    fn matmul_matches_hand_product() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let b = Matrix::from_vec(2, 1, vec![5.0, 6.0]);
        assert_eq!(a.matmul(&b).data(), &[17.0, 39.0]);
    }

    #[test]
    fn elementwise_gradients() {
        check(sample(), |v| v.sigmoid().sum());
        check(sample(), |v| v.exp().square().sum());
        check(sample(), |v| v.leaky_relu(0.2).mul(v).sum());
        check(sample(), |v| v.map_abs_plus_one().ln().sum());
        check(sample(), |v| v.clamp(-0.5, 0.5).sum());
    }

    #[test]
    fn structural_gradients() {
        check(sample(), |v| v.matmul(v.t()).square().sum());
        check(sample(), |v| v.softmax_rows().square().sum());
        check(sample(), |v| v.layer_norm_rows(1e-5).mul(v).sum());
        check(sample(), |v| v.sum_rows().square().sum());
        check(sample(), |v| v.sum_cols().square().sum());
        check(sample(), |v| v.slice_cols(1, 2).concat_cols(v).square().sum());
        check(sample(), |v| v.reshape(3, 2).matmul(v).diag().square().sum());
        check(sample(), |v| v.sort_desc().mul(v).sum());
        check(sample(), |v| v.sum_cols().repeat_rows(4).square().sum());
    }

    #[test]
    fn broadcast_gradients() {
        let row = Matrix::row_vector(vec![0.5, -0.25, 2.0]);
        check(sample(), |v| {
            let r = v.tape().constant(row.clone());
            v.add_row(r).mul_row(r).square().sum()
        });
        check(row.clone(), |r| {
            let a = r.tape().constant(sample());
            a.add_row(r).mul_row(r).square().sum()
        });
        let col = Matrix::column_vector(vec![1.5, 2.5]);
        check(col, |c| {
            let a = c.tape().constant(sample());
            a.div_col(c).square().sum()
        });
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::new();
        let c = tape.constant(sample());
        let p = tape.param(sample());
        let out = c.mul(p).sum();
        let grads = tape.backward(out);
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(p).unwrap(), &sample());
    }

    impl<'t> Var<'t> {
        fn map_abs_plus_one(self) -> Var<'t> {
            self.square().add_scalar(1.0)
        }
    }
}
