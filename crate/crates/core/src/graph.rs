//! Tape-based reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! A [`Graph`] records every operation eagerly: each call computes the output
//! value immediately and remembers how it was produced. [`Graph::backward`]
//! then walks the tape in reverse and accumulates gradients for every node
//! that (transitively) depends on a trainable leaf.
//!
//! Spatial ops (`im2col3x3`, `avg_pool2`, `upsample2`) interpret a matrix as a
//! `[height * width, channels]` feature map.

use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNormRows(Var, f64),
    NormalizeRows(Var),
    Silu(Var),
    Gelu(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    Diag(Var),
    Im2Col { x: Var, height: usize, width: usize },
    AvgPool2 { x: Var, height: usize, width: usize },
    Upsample2 { x: Var, height: usize, width: usize },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Matrix> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_K * x * x * x);
    let th = u.tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[var.0].value
    }

    pub fn needs_grad(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let g = self.grad_of(&[a, b]);
        self.push(value, Op::MatMul(a, b), g)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let g = self.grad_of(&[a]);
        self.push(value, Op::Transpose(a), g)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let g = self.grad_of(&[a, b]);
        self.push(value, Op::Add(a, b), g)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let g = self.grad_of(&[a, b]);
        self.push(value, Op::Sub(a, b), g)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let g = self.grad_of(&[a, b]);
        self.push(value, Op::Mul(a, b), g)
    }

    /// `a[m, n] + row[1, n]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        assert_eq!(r.shape(), (1, x.cols()), "add_row expects a [1, {}] row", x.cols());
        let rv = r.as_slice();
        let value = Matrix::from_fn(x.rows(), x.cols(), |i, j| x.get(i, j) + rv[j]);
        let g = self.grad_of(&[a, row]);
        self.push(value, Op::AddRow(a, row), g)
    }

    /// `a[m, n] * row[1, n]` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        assert_eq!(r.shape(), (1, x.cols()), "mul_row expects a [1, {}] row", x.cols());
        let rv = r.as_slice();
        let value = Matrix::from_fn(x.rows(), x.cols(), |i, j| x.get(i, j) * rv[j]);
        let g = self.grad_of(&[a, row]);
        self.push(value, Op::MulRow(a, row), g)
    }

    /// `a[m, n] * col[m, 1]` broadcast over columns.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (x, c) = (self.value(a), self.value(col));
        assert_eq!(c.shape(), (x.rows(), 1), "mul_col expects a [{}, 1] column", x.rows());
        let cv = c.as_slice();
        let value = Matrix::from_fn(x.rows(), x.cols(), |i, j| x.get(i, j) * cv[i]);
        let g = self.grad_of(&[a, col]);
        self.push(value, Op::MulCol(a, col), g)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).scale(factor);
        let g = self.grad_of(&[a]);
        self.push(value, Op::Scale(a, factor), g)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols(), cols, "concat_rows column mismatch");
            rows += m.rows();
            data.extend_from_slice(m.as_slice());
        }
        let value = Matrix::from_vec(rows, cols, data).expect("concat_rows shape");
        let g = self.grad_of(parts);
        self.push(value, Op::ConcatRows(parts.to_vec()), g)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.value(parts[0]).rows();
        let total: usize = parts
            .iter()
            .map(|&p| {
                assert_eq!(self.value(p).rows(), rows, "concat_cols row mismatch");
                self.value(p).cols()
            })
            .sum();
        let mut value = Matrix::zeros(rows, total);
        let mut offset = 0;
        for &p in parts {
            let m = self.value(p);
            for r in 0..rows {
                value.row_mut(r)[offset..offset + m.cols()].copy_from_slice(m.row(r));
            }
            offset += m.cols();
        }
        let g = self.grad_of(parts);
        self.push(value, Op::ConcatCols(parts.to_vec()), g)
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let x = self.value(a);
        assert!(start < end && end <= x.rows(), "slice_rows {start}..{end} of {}", x.rows());
        let value = Matrix::from_vec(
            end - start,
            x.cols(),
            x.as_slice()[start * x.cols()..end * x.cols()].to_vec(),
        )
        .expect("slice_rows shape");
        let g = self.grad_of(&[a]);
        self.push(value, Op::SliceRows(a, start), g)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let x = self.value(a);
        assert!(start < end && end <= x.cols(), "slice_cols {start}..{end} of {}", x.cols());
        let value = Matrix::from_fn(x.rows(), end - start, |r, c| x.get(r, start + c));
        let g = self.grad_of(&[a]);
        self.push(value, Op::SliceCols(a, start), g)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut value = x.clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
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
        let g = self.grad_of(&[a]);
        self.push(value, Op::SoftmaxRows(a), g)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut value = x.clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let g = self.grad_of(&[a]);
        self.push(value, Op::LogSoftmaxRows(a), g)
    }

    /// Per-row standardization `(x - mean) / sqrt(var + eps)` without affine terms.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let mut value = x.clone();
        let n = x.cols() as f64;
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
        }
        let g = self.grad_of(&[a]);
        self.push(value, Op::LayerNormRows(a, eps), g)
    }

    /// Scales each row to unit Euclidean norm. Callers must rule out zero rows.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
        let g = self.grad_of(&[a]);
        self.push(value, Op::NormalizeRows(a), g)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * sigmoid(x));
        let g = self.grad_of(&[a]);
        self.push(value, Op::Silu(a), g)
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(gelu);
        let g = self.grad_of(&[a]);
        self.push(value, Op::Gelu(a), g)
    }

    /// Elementwise |x|; the subgradient at 0 is 0.
    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::abs);
        let g = self.grad_of(&[a]);
        self.push(value, Op::Abs(a), g)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        let g = self.grad_of(&[a]);
        self.push(value, Op::Sum(a), g)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).mean());
        let g = self.grad_of(&[a]);
        self.push(value, Op::Mean(a), g)
    }

    /// Column means: `[m, n] -> [1, n]`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let m = x.rows() as f64;
        let value = Matrix::from_fn(1, x.cols(), |_, c| {
            (0..x.rows()).map(|r| x.get(r, c)).sum::<f64>() / m
        });
        let g = self.grad_of(&[a]);
        self.push(value, Op::MeanRows(a), g)
    }

    /// Diagonal of a square matrix as an `[n, 1]` column.
    pub fn diag(&mut self, a: Var) -> Var {
        let x = self.value(a);
        assert_eq!(x.rows(), x.cols(), "diag of a non-square matrix");
        let value = Matrix::from_fn(x.rows(), 1, |r, _| x.get(r, r));
        let g = self.grad_of(&[a]);
        self.push(value, Op::Diag(a), g)
    }

    /// 3x3 patch extraction with zero padding: `[h*w, c] -> [h*w, 9c]`.
    /// Column `(ky * 3 + kx) * c + ch` holds pixel `(y + ky - 1, x + kx - 1)`.
    pub fn im2col3x3(&mut self, a: Var, height: usize, width: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.rows(), height * width, "im2col spatial size mismatch");
        let c = x.cols();
        let mut value = Matrix::zeros(height * width, 9 * c);
        for y in 0..height {
            for xx in 0..width {
                let out = value.row_mut(y * width + xx);
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= height as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = xx as isize + kx as isize - 1;
                        if sx < 0 || sx >= width as isize {
                            continue;
                        }
                        let src = x.row(sy as usize * width + sx as usize);
                        let off = (ky * 3 + kx) * c;
                        out[off..off + c].copy_from_slice(src);
                    }
                }
            }
        }
        let g = self.grad_of(&[a]);
        self.push(value, Op::Im2Col { x: a, height, width }, g)
    }

    /// 2x2 average pooling: `[h*w, c] -> [(h/2)*(w/2), c]`.
    pub fn avg_pool2(&mut self, a: Var, height: usize, width: usize) -> Var {
        let x = self.value(a);
        assert!(height % 2 == 0 && width % 2 == 0, "avg_pool2 needs even extents");
        assert_eq!(x.rows(), height * width, "avg_pool2 spatial size mismatch");
        let (oh, ow, c) = (height / 2, width / 2, x.cols());
        let mut value = Matrix::zeros(oh * ow, c);
        for y in 0..oh {
            for xx in 0..ow {
                let out = value.row_mut(y * ow + xx);
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let src = x.row((2 * y + dy) * width + 2 * xx + dx);
                    for ch in 0..c {
                        out[ch] += 0.25 * src[ch];
                    }
                }
            }
        }
        let g = self.grad_of(&[a]);
        self.push(value, Op::AvgPool2 { x: a, height, width }, g)
    }

    /// Nearest-neighbour 2x upsampling: `[h*w, c] -> [(2h)*(2w), c]`.
    pub fn upsample2(&mut self, a: Var, height: usize, width: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.rows(), height * width, "upsample2 spatial size mismatch");
        let (ow, c) = (2 * width, x.cols());
        let mut value = Matrix::zeros(4 * height * width, c);
        for y in 0..2 * height {
            for xx in 0..ow {
                value
                    .row_mut(y * ow + xx)
                    .copy_from_slice(x.row((y / 2) * width + xx / 2));
            }
        }
        let g = self.grad_of(&[a]);
        self.push(value, Op::Upsample2 { x: a, height, width }, g)
    }

    /// Backpropagates from a scalar root.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).shape(), (1, 1), "backward root must be a scalar");
        self.backward_with(vec![(root, Matrix::scalar(1.0))])
    }

    /// Backpropagates from arbitrary seed gradients (vector-Jacobian products).
    pub fn backward_with(&self, seeds: Vec<(Var, Matrix)>) -> Gradients {
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        let mut top = 0;
        for (var, seed) in seeds {
            assert_eq!(seed.shape(), self.value(var).shape(), "seed gradient shape mismatch");
            top = top.max(var.0 + 1);
            accumulate(&mut grads, var, seed);
        }
        for i in (0..top).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else {
                continue;
            };
            self.propagate(&node.op, &node.value, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Gradients { grads }
    }

    fn propagate(&self, op: &Op, y: &Matrix, dy: &Matrix, grads: &mut [Option<Matrix>]) {
        let wants = |v: &Var| self.nodes[v.0].needs_grad;
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(a) {
                    let da = dy.matmul_t(self.value(*b));
                    accumulate(grads, *a, da);
                }
                if wants(b) {
                    let db = self.value(*a).t_matmul(dy);
                    accumulate(grads, *b, db);
                }
            }
            Op::Transpose(a) => {
                if wants(a) {
                    accumulate(grads, *a, dy.transpose());
                }
            }
            Op::Add(a, b) => {
                if wants(a) {
                    accumulate(grads, *a, dy.clone());
                }
                if wants(b) {
                    accumulate(grads, *b, dy.clone());
                }
            }
            Op::Sub(a, b) => {
                if wants(a) {
                    accumulate(grads, *a, dy.clone());
                }
                if wants(b) {
                    accumulate(grads, *b, dy.scale(-1.0));
                }
            }
            Op::Mul(a, b) => {
                if wants(a) {
                    accumulate(grads, *a, dy.zip_map(self.value(*b), |g, v| g * v));
                }
                if wants(b) {
                    accumulate(grads, *b, dy.zip_map(self.value(*a), |g, v| g * v));
                }
            }
            Op::AddRow(a, row) => {
                if wants(a) {
                    accumulate(grads, *a, dy.clone());
                }
                if wants(row) {
                    accumulate(grads, *row, column_sums(dy));
                }
            }
            Op::MulRow(a, row) => {
                let r = self.value(*row).as_slice();
                if wants(a) {
                    let da = Matrix::from_fn(dy.rows(), dy.cols(), |i, j| dy.get(i, j) * r[j]);
                    accumulate(grads, *a, da);
                }
                if wants(row) {
                    let x = self.value(*a);
                    let dr = Matrix::from_fn(1, dy.cols(), |_, j| {
                        (0..dy.rows()).map(|i| dy.get(i, j) * x.get(i, j)).sum()
                    });
                    accumulate(grads, *row, dr);
                }
            }
            Op::MulCol(a, col) => {
                let cv = self.value(*col).as_slice();
                if wants(a) {
                    let da = Matrix::from_fn(dy.rows(), dy.cols(), |i, j| dy.get(i, j) * cv[i]);
                    accumulate(grads, *a, da);
                }
                if wants(col) {
                    let x = self.value(*a);
                    let dc = Matrix::from_fn(dy.rows(), 1, |i, _| {
                        dy.row(i).iter().zip(x.row(i)).map(|(g, v)| g * v).sum()
                    });
                    accumulate(grads, *col, dc);
                }
            }
            Op::Scale(a, factor) => {
                if wants(a) {
                    accumulate(grads, *a, dy.scale(*factor));
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let (rows, cols) = self.value(*p).shape();
                    if wants(p) {
                        let slice =
                            dy.as_slice()[offset * cols..(offset + rows) * cols].to_vec();
                        accumulate(grads, *p, Matrix::from_vec(rows, cols, slice).unwrap());
                    }
                    offset += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let (rows, cols) = self.value(*p).shape();
                    if wants(p) {
                        let part = Matrix::from_fn(rows, cols, |r, c| dy.get(r, offset + c));
                        accumulate(grads, *p, part);
                    }
                    offset += cols;
                }
            }
            Op::SliceRows(a, start) => {
                if wants(a) {
                    let (rows, cols) = self.value(*a).shape();
                    let mut da = Matrix::zeros(rows, cols);
                    da.as_mut_slice()[start * cols..(start + dy.rows()) * cols]
                        .copy_from_slice(dy.as_slice());
                    accumulate(grads, *a, da);
                }
            }
            Op::SliceCols(a, start) => {
                if wants(a) {
                    let (rows, cols) = self.value(*a).shape();
                    let mut da = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        da.row_mut(r)[*start..start + dy.cols()].copy_from_slice(dy.row(r));
                    }
                    accumulate(grads, *a, da);
                }
            }
            Op::SoftmaxRows(a) => {
                if wants(a) {
                    let mut da = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), dy.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (o, (yv, gv)) in da.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                            *o = yv * (gv - dot);
                        }
                    }
                    accumulate(grads, *a, da);
                }
            }
            Op::LogSoftmaxRows(a) => {
                if wants(a) {
                    let mut da = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), dy.row(r));
                        let total: f64 = gr.iter().sum();
                        for (o, (yv, gv)) in da.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                            *o = gv - yv.exp() * total;
                        }
                    }
                    accumulate(grads, *a, da);
                }
            }
            Op::LayerNormRows(a, eps) => {
                if wants(a) {
                    let x = self.value(*a);
                    let n = x.cols() as f64;
                    let mut da = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let xr = x.row(r);
                        let mean = xr.iter().sum::<f64>() / n;
                        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                        let inv = 1.0 / (var + eps).sqrt();
                        let (yr, gr) = (y.row(r), dy.row(r));
                        let g_mean = gr.iter().sum::<f64>() / n;
                        let gy_mean = gr.iter().zip(yr).map(|(g, v)| g * v).sum::<f64>() / n;
                        for (o, (yv, gv)) in da.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                            *o = inv * (gv - g_mean - yv * gy_mean);
                        }
                    }
                    accumulate(grads, *a, da);
                }
            }
            Op::NormalizeRows(a) => {
                if wants(a) {
                    let x = self.value(*a);
                    let mut da = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let norm = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                        let (yr, gr) = (y.row(r), dy.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (o, (yv, gv)) in da.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                            *o = (gv - yv * dot) / norm;
                        }
                    }
                    accumulate(grads, *a, da);
                }
            }
            Op::Silu(a) => {
                if wants(a) {
                    let da = dy.zip_map(self.value(*a), |g, x| {
                        let s = sigmoid(x);
                        g * s * (1.0 + x * (1.0 - s))
                    });
                    accumulate(grads, *a, da);
                }
            }
            Op::Gelu(a) => {
                if wants(a) {
                    accumulate(grads, *a, dy.zip_map(self.value(*a), |g, x| g * gelu_grad(x)));
                }
            }
            Op::Abs(a) => {
                if wants(a) {
                    let da = dy.zip_map(self.value(*a), |g, x| {
                        if x > 0.0 {
                            g
                        } else if x < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    });
                    accumulate(grads, *a, da);
                }
            }
            Op::Sum(a) => {
                if wants(a) {
                    let (rows, cols) = self.value(*a).shape();
                    accumulate(grads, *a, Matrix::filled(rows, cols, dy.item()));
                }
            }
            Op::Mean(a) => {
                if wants(a) {
                    let (rows, cols) = self.value(*a).shape();
                    let g = dy.item() / (rows * cols) as f64;
                    accumulate(grads, *a, Matrix::filled(rows, cols, g));
                }
            }
            Op::MeanRows(a) => {
                if wants(a) {
                    let (rows, cols) = self.value(*a).shape();
                    let d = dy.as_slice();
                    let m = rows as f64;
                    accumulate(grads, *a, Matrix::from_fn(rows, cols, |_, c| d[c] / m));
                }
            }
            Op::Diag(a) => {
                if wants(a) {
                    let n = dy.rows();
                    let mut da = Matrix::zeros(n, n);
                    for i in 0..n {
                        da.set(i, i, dy.get(i, 0));
                    }
                    accumulate(grads, *a, da);
                }
            }
            Op::Im2Col { x, height, width } => {
                if wants(x) {
                    let (h, w) = (*height, *width);
                    let c = self.value(*x).cols();
                    let mut dx = Matrix::zeros(h * w, c);
                    for yy in 0..h {
                        for xx in 0..w {
                            let g = dy.row(yy * w + xx);
                            for ky in 0..3 {
                                let sy = yy as isize + ky as isize - 1;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                for kx in 0..3 {
                                    let sx = xx as isize + kx as isize - 1;
                                    if sx < 0 || sx >= w as isize {
                                        continue;
                                    }
                                    let off = (ky * 3 + kx) * c;
                                    let dst = dx.row_mut(sy as usize * w + sx as usize);
                                    for ch in 0..c {
                                        dst[ch] += g[off + ch];
                                    }
                                }
                            }
                        }
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::AvgPool2 { x, height, width } => {
                if wants(x) {
                    let (h, w) = (*height, *width);
                    let (ow, c) = (w / 2, dy.cols());
                    let mut dx = Matrix::zeros(h * w, c);
                    for yy in 0..h {
                        for xx in 0..w {
                            let g = dy.row((yy / 2) * ow + xx / 2);
                            for (o, gv) in dx.row_mut(yy * w + xx).iter_mut().zip(g) {
                                *o = 0.25 * gv;
                            }
                        }
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::Upsample2 { x, height, width } => {
                if wants(x) {
                    let (h, w) = (*height, *width);
                    let (ow, c) = (2 * w, dy.cols());
                    let mut dx = Matrix::zeros(h * w, c);
                    for yy in 0..2 * h {
                        for xx in 0..ow {
                            let g = dy.row(yy * ow + xx);
                            let dst = dx.row_mut((yy / 2) * w + xx / 2);
                            for ch in 0..c {
                                dst[ch] += g[ch];
                            }
                        }
                    }
                    accumulate(grads, *x, dx);
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], var: Var, g: Matrix) {
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn column_sums(m: &Matrix) -> Matrix {
    Matrix::from_fn(1, m.cols(), |_, c| (0..m.rows()).map(|r| m.get(r, c)).sum())
}
