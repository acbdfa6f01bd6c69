//! Reverse-mode automatic differentiation over `f64` matrices.
//!
//! A [`Tape`] is an append-only list of nodes; each node stores its value and
//! the op that produced it. [`Tape::backward`] walks the list in reverse,
//! accumulating exact gradients for every node, including leaves. Graphs are
//! cheap to build and are discarded after each training or attack step.

use ndarray::{s, Array2, Axis};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// Elementwise sum of two same-shape matrices.
    Add(Var, Var),
    /// Elementwise difference.
    Sub(Var, Var),
    /// Elementwise (Hadamard) product.
    Mul(Var, Var),
    /// Matrix product of an `(n, k)` by a `(k, m)` matrix.
    MatMul(Var, Var),
    /// `(n, m)` plus a `(1, m)` row broadcast over all rows.
    AddRow(Var, Var),
    /// `(n, m)` times an `(n, 1)` column broadcast over all columns.
    MulCol(Var, Var),
    /// Elementwise `scale * x + shift`.
    /// `a * scale + shift`; the shift is constant so only the scale
    /// matters on the way back.
    Affine { a: Var, scale: f64 },
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    /// Natural logarithm; the input must be strictly positive.
    Ln(Var),
    /// `ln(1 + exp(x))`, computed in a numerically stable form.
    Softplus(Var),
    /// Columns `start..end` of the input.
    SliceCols(Var, usize, usize),
    /// Horizontal concatenation of two matrices with equal row counts.
    ConcatCols(Var, Var),
    /// Row-wise softmax.
    SoftmaxRows(Var),
    /// Row-wise log-softmax.
    LogSoftmaxRows(Var),
    /// Sum of all entries, as a `(1, 1)` matrix.
    SumAll(Var),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient of the root with respect to `var`, if the var influenced the
    /// root.
    pub fn get(&self, var: Var) -> Option<&Array2<f64>> {
        self.grads[var.0].as_ref()
    }

    /// Like [`Gradients::get`] but owned, with zeros for uninvolved vars.
    pub fn take(&mut self, var: Var, shape: (usize, usize)) -> Array2<f64> {
        self.grads[var.0].take().unwrap_or_else(|| Array2::zeros(shape))
    }
}

/// An append-only computation graph.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value of a node.
    pub fn value(&self, var: Var) -> &Array2<f64> {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Registers an input node. Leaves receive gradients like any other
    /// node; whether they are parameters or constants is the caller's
    /// concern.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let value = self.value(a) + self.value(row);
        self.push(value, Op::AddRow(a, row))
    }

    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        debug_assert_eq!(self.value(col).ncols(), 1);
        let value = self.value(a) * self.value(col);
        self.push(value, Op::MulCol(a, col))
    }

    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(a).mapv(|x| scale * x + shift);
        self.push(value, Op::Affine { a, scale })
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Var {
        self.affine(a, scale, 0.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid_scalar);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::ln);
        self.push(value, Op::Ln(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(softplus_scalar);
        self.push(value, Op::Softplus(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(value, Op::SliceCols(a, start, end))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let value = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("row counts match");
        self.push(value, Op::ConcatCols(a, b))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows_value(self.value(a));
        self.push(value, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let value = log_softmax_rows_value(self.value(a));
        self.push(value, Op::LogSoftmaxRows(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let total = self.value(a).sum();
        self.push(Array2::from_elem((1, 1), total), Op::SumAll(a))
    }

    /// Scalar value of a `(1, 1)` node.
    pub fn scalar(&self, var: Var) -> f64 {
        debug_assert_eq!(self.value(var).dim(), (1, 1));
        self.value(var)[(0, 0)]
    }

    /// Reverse pass from a scalar root. Returns the gradient of the root
    /// with respect to every node.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).dim(), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Array2::ones((1, 1)));

        for index in (0..=root.0).rev() {
            let Some(grad) = grads[index].take() else { continue };
            match &self.nodes[index].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, grad.clone());
                    accumulate(&mut grads, *b, grad.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, grad.clone());
                    accumulate(&mut grads, *b, -&grad);
                }
                Op::Mul(a, b) => {
                    let da = &grad * self.value(*b);
                    let db = &grad * self.value(*a);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MatMul(a, b) => {
                    let da = grad.dot(&self.value(*b).t());
                    let db = self.value(*a).t().dot(&grad);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::AddRow(a, row) => {
                    let drow = grad.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *a, grad.clone());
                    accumulate(&mut grads, *row, drow);
                }
                Op::MulCol(a, col) => {
                    let da = &grad * self.value(*col);
                    let dcol = (&grad * self.value(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *col, dcol);
                }
                Op::Affine { a, scale } => {
                    accumulate(&mut grads, *a, grad.mapv(|g| g * scale));
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[index].value;
                    let da = &grad * &(y * &y.mapv(|v| 1.0 - v));
                    accumulate(&mut grads, *a, da);
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[index].value;
                    let da = &grad * &y.mapv(|v| 1.0 - v * v);
                    accumulate(&mut grads, *a, da);
                }
                Op::Exp(a) => {
                    let da = &grad * &self.nodes[index].value;
                    accumulate(&mut grads, *a, da);
                }
                Op::Ln(a) => {
                    let da = &grad / self.value(*a);
                    accumulate(&mut grads, *a, da);
                }
                Op::Softplus(a) => {
                    let da = &grad * &self.value(*a).mapv(sigmoid_scalar);
                    accumulate(&mut grads, *a, da);
                }
                Op::SliceCols(a, start, end) => {
                    let mut da = Array2::zeros(self.value(*a).dim());
                    da.slice_mut(s![.., *start..*end]).assign(&grad);
                    accumulate(&mut grads, *a, da);
                }
                Op::ConcatCols(a, b) => {
                    let split = self.value(*a).ncols();
                    let da = grad.slice(s![.., ..split]).to_owned();
                    let db = grad.slice(s![.., split..]).to_owned();
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::SoftmaxRows(a) => {
                    // dx_i = y_i * (g_i - <g_i, y_i>) per row.
                    let y = &self.nodes[index].value;
                    let dots = (&grad * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let da = y * &(&grad - &dots);
                    accumulate(&mut grads, *a, da);
                }
                Op::LogSoftmaxRows(a) => {
                    // dx = g - softmax(x) * rowsum(g).
                    let softmax = self.nodes[index].value.mapv(f64::exp);
                    let row_sums = grad.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let da = &grad - &(&softmax * &row_sums);
                    accumulate(&mut grads, *a, da);
                }
                Op::SumAll(a) => {
                    let g = grad[(0, 0)];
                    accumulate(&mut grads, *a, Array2::from_elem(self.value(*a).dim(), g));
                }
            }
            grads[index] = Some(grad);
        }
        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], var: Var, contribution: Array2<f64>) {
    match &mut grads[var.0] {
        Some(existing) => *existing += &contribution,
        slot @ None => *slot = Some(contribution),
    }
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn softmax_rows_value(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn log_softmax_rows_value(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        row.mapv_inplace(|v| v - log_sum);
    }
    out
}
