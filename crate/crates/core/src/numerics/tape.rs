//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation of a forward pass as a node holding
//! its value and the operation that produced it. [`Tape::backward`] walks
//! the nodes in reverse creation order and accumulates the adjoint of each
//! input. Nodes are created strictly after their inputs, so reverse index
//! order is a valid topological order.

use super::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    Gather(Var, Vec<usize>),
    ScatterAdd(Var, Vec<usize>),
    SoftmaxRows(Var),
    SegmentSoftmax(Var, Vec<usize>),
    Relu(Var),
    Gelu(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    RowL2Norm(Var),
    RowSum(Var),
    Sum(Var),
    Mean(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Tensor },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Smoothing added under the square root of [`Tape::row_l2_norm`].
pub const NORM_EPS: f64 = 1e-12;

/// Variance floor of [`Tape::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-10;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        debug_assert!(
            !inputs.iter().all(|v| self.value(*v).is_finite()) || value.is_finite(),
            "non-finite output of {op:?} from finite inputs"
        );
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_raw(value, op, requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b), &[a, b])
    }

    /// Adds a `1 x n` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let v = self.broadcast_row(x, row, |a, b| a + b);
        self.push(v, Op::AddRow(x, row), &[x, row])
    }

    /// Multiplies every row of `x` elementwise by a `1 x n` row.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Var {
        let v = self.broadcast_row(x, row, |a, b| a * b);
        self.push(v, Op::MulRow(x, row), &[x, row])
    }

    fn broadcast_row(&self, x: Var, row: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (xv, rv) = (self.value(x), self.value(row));
        assert_eq!(rv.rows(), 1, "broadcast operand must be a row");
        assert_eq!(xv.cols(), rv.cols(), "broadcast width mismatch");
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(rv.data()) {
                *o = f(*o, *b);
            }
        }
        out
    }

    /// Scales row `i` of `x` by entry `i` of the column `n x 1`.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Var {
        let (xv, cv) = (self.value(x), self.value(col));
        assert_eq!(cv.cols(), 1, "mul_col operand must be a column");
        assert_eq!(xv.rows(), cv.rows(), "mul_col height mismatch");
        let mut out = xv.clone();
        for r in 0..out.rows() {
            let s = cv.data()[r];
            out.row_mut(r).iter_mut().for_each(|o| *o *= s);
        }
        self.push(out, Op::MulCol(x, col), &[x, col])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let v = self.value(x).map(|a| a * factor);
        self.push(v, Op::Scale(x, factor), &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let v = self.value(x).transpose();
        self.push(v, Op::Transpose(x), &[x])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for p in parts {
            let pv = self.value(*p);
            assert_eq!(pv.rows(), rows, "concat_cols height mismatch");
            for r in 0..rows {
                out.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
            }
            offset += pv.cols();
        }
        self.push(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let pv = self.value(*p);
            assert_eq!(pv.cols(), cols, "concat_rows width mismatch");
            data.extend_from_slice(pv.data());
            rows += pv.rows();
        }
        let out = Tensor::from_vec(rows, cols, data).expect("concat_rows");
        self.push(out, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Columns `start..end` of `x`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let xv = self.value(x);
        assert!(start < end && end <= xv.cols(), "slice {start}..{end} of {} cols", xv.cols());
        let mut out = Tensor::zeros(xv.rows(), end - start);
        for r in 0..xv.rows() {
            out.row_mut(r).copy_from_slice(&xv.row(r)[start..end]);
        }
        self.push(out, Op::SliceCols(x, start), &[x])
    }

    /// Row lookup (embedding gather). Indices may repeat.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Var {
        let tv = self.value(table);
        assert!(
            indices.iter().all(|&i| i < tv.rows()),
            "gather index out of range for {} rows",
            tv.rows()
        );
        let out = tv.gather_rows(indices);
        self.push(out, Op::Gather(table, indices.to_vec()), &[table])
    }

    /// `out[indices[i]] += x[i]` into `n` rows.
    pub fn scatter_add(&mut self, x: Var, indices: &[usize], n: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.rows(), indices.len(), "scatter_add index count");
        let mut out = Tensor::zeros(n, xv.cols());
        for (i, &dst) in indices.iter().enumerate() {
            for (o, v) in out.row_mut(dst).iter_mut().zip(xv.row(i)) {
                *o += v;
            }
        }
        self.push(out, Op::ScatterAdd(x, indices.to_vec()), &[x])
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = xv.clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        self.push(out, Op::SoftmaxRows(x), &[x])
    }

    /// Softmax of an `n x 1` column within groups given by `segments`
    /// (entry `i` belongs to group `segments[i]`).
    pub fn segment_softmax(&mut self, scores: Var, segments: &[usize]) -> Var {
        let sv = self.value(scores);
        assert_eq!(sv.cols(), 1, "segment_softmax expects a column");
        assert_eq!(sv.rows(), segments.len(), "segment count");
        let out = segment_softmax_values(sv.data(), segments);
        let out = Tensor::from_vec(segments.len(), 1, out).expect("segment_softmax");
        self.push(out, Op::SegmentSoftmax(scores, segments.to_vec()), &[scores])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.max(0.0));
        self.push(v, Op::Relu(x), &[x])
    }

    /// `max(0, x)`; the same map as [`Tape::relu`], named for loss code.
    pub fn hinge(&mut self, x: Var) -> Var {
        self.relu(x)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(gelu);
        self.push(v, Op::Gelu(x), &[x])
    }

    /// Per-row normalization to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = xv.cols() as f64;
        let mut out = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.rows());
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * s);
            inv_std.push(s);
        }
        self.push(out, Op::LayerNorm { x, inv_std }, &[x])
    }

    /// Euclidean norm of each row, as an `n x 1` column.
    pub fn row_l2_norm(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = (0..xv.rows())
            .map(|r| (xv.row(r).iter().map(|v| v * v).sum::<f64>() + NORM_EPS).sqrt())
            .collect();
        let out = Tensor::from_vec(xv.rows(), 1, data).expect("row_l2_norm");
        self.push(out, Op::RowL2Norm(x), &[x])
    }

    /// Sum of each row, as an `n x 1` column.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = (0..xv.rows()).map(|r| xv.row(r).iter().sum()).collect();
        let out = Tensor::from_vec(xv.rows(), 1, data).expect("row_sum");
        self.push(out, Op::RowSum(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let v = Tensor::scalar(xv.sum() / xv.len() as f64);
        self.push(v, Op::Mean(x), &[x])
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), targets.len(), "one target per logit row");
        assert!(lv.rows() > 0, "cross entropy over no rows");
        let mut probs = lv.clone();
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = lv.row(r);
            assert!(t < row.len(), "target {t} out of range");
            total += log_sum_exp(row) - row[t];
            softmax_in_place(probs.row_mut(r));
        }
        let v = Tensor::scalar(total / targets.len() as f64);
        self.push(
            v,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    /// Affine map `x W + b` with `W: in x out` and `b: 1 x out`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    /// Adjoints of every node with respect to the scalar `output`.
    pub fn backward(&self, output: Var) -> Grads {
        let out_value = self.value(output);
        assert_eq!(out_value.len(), 1, "backward from a non-scalar");
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::filled(out_value.rows(), out_value.cols(), 1.0));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Grads { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.requires_grad(*a) {
                    let ga = g.matmul(&self.value(*b).transpose());
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let gb = self.value(*a).transpose().matmul(g);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let ga = g.zip_map(self.value(*b), |x, y| x * y);
                let gb = g.zip_map(self.value(*a), |x, y| x * y);
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::AddRow(x, row) => {
                self.accumulate(grads, *x, g.clone());
                self.accumulate(grads, *row, column_sums(g));
            }
            Op::MulRow(x, row) => {
                let rv = self.value(*row);
                let xv = self.value(*x);
                let mut gx = g.clone();
                let mut grow = Tensor::zeros(1, rv.cols());
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        gx.row_mut(r)[c] *= rv.data()[c];
                        grow.data_mut()[c] += g.get(r, c) * xv.get(r, c);
                    }
                }
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *row, grow);
            }
            Op::MulCol(x, col) => {
                let cv = self.value(*col);
                let xv = self.value(*x);
                let mut gx = g.clone();
                let mut gcol = Tensor::zeros(cv.rows(), 1);
                for r in 0..g.rows() {
                    let s = cv.data()[r];
                    gx.row_mut(r).iter_mut().for_each(|v| *v *= s);
                    gcol.data_mut()[r] = g.row(r).iter().zip(xv.row(r)).map(|(a, b)| a * b).sum();
                }
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *col, gcol);
            }
            Op::Scale(x, f) => self.accumulate(grads, *x, g.map(|v| v * f)),
            Op::Transpose(x) => self.accumulate(grads, *x, g.transpose()),
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.requires_grad(*p) {
                        let mut gp = Tensor::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        self.accumulate(grads, *p, gp);
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let pv = self.value(*p);
                    let n = pv.len();
                    if self.requires_grad(*p) {
                        let gp = Tensor::from_vec(
                            pv.rows(),
                            pv.cols(),
                            g.data()[offset..offset + n].to_vec(),
                        )
                        .expect("concat_rows grad");
                        self.accumulate(grads, *p, gp);
                    }
                    offset += n;
                }
            }
            Op::SliceCols(x, start) => {
                let xv = self.value(*x);
                let mut gx = Tensor::zeros(xv.rows(), xv.cols());
                for r in 0..g.rows() {
                    gx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Gather(table, indices) => {
                let tv = self.value(*table);
                let mut gt = Tensor::zeros(tv.rows(), tv.cols());
                for (i, &src) in indices.iter().enumerate() {
                    for (o, v) in gt.row_mut(src).iter_mut().zip(g.row(i)) {
                        *o += v;
                    }
                }
                self.accumulate(grads, *table, gt);
            }
            Op::ScatterAdd(x, indices) => {
                self.accumulate(grads, *x, g.gather_rows(indices));
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let mut gx = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot: f64 = y.row(r).iter().zip(g.row(r)).map(|(a, b)| a * b).sum();
                    for c in 0..y.cols() {
                        gx.row_mut(r)[c] = y.get(r, c) * (g.get(r, c) - dot);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::SegmentSoftmax(x, segments) => {
                let y = node.value.data();
                let n_seg = segments.iter().copied().max().map_or(0, |m| m + 1);
                let mut dots = vec![0.0; n_seg];
                for (i, &s) in segments.iter().enumerate() {
                    dots[s] += y[i] * g.data()[i];
                }
                let data = segments
                    .iter()
                    .enumerate()
                    .map(|(i, &s)| y[i] * (g.data()[i] - dots[s]))
                    .collect();
                let gx = Tensor::from_vec(y.len(), 1, data).expect("segment grad");
                self.accumulate(grads, *x, gx);
            }
            Op::Relu(x) => {
                let gx = g.zip_map(self.value(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 });
                self.accumulate(grads, *x, gx);
            }
            Op::Gelu(x) => {
                let gx = g.zip_map(self.value(*x), |gv, xv| gv * gelu_derivative(xv));
                self.accumulate(grads, *x, gx);
            }
            Op::LayerNorm { x, inv_std } => {
                let y = &node.value;
                let n = y.cols() as f64;
                let mut gx = Tensor::zeros(y.rows(), y.cols());
                for (r, &inv) in inv_std.iter().enumerate() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let g_mean = gr.iter().sum::<f64>() / n;
                    let gy_mean = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                    for c in 0..y.cols() {
                        gx.row_mut(r)[c] = inv * (gr[c] - g_mean - yr[c] * gy_mean);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::RowL2Norm(x) => {
                let xv = self.value(*x);
                let norms = node.value.data();
                let mut gx = xv.clone();
                for (r, norm) in norms.iter().enumerate() {
                    let s = g.data()[r] / norm;
                    gx.row_mut(r).iter_mut().for_each(|v| *v *= s);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::RowSum(x) => {
                let xv = self.value(*x);
                let mut gx = Tensor::zeros(xv.rows(), xv.cols());
                for r in 0..xv.rows() {
                    let s = g.data()[r];
                    gx.row_mut(r).iter_mut().for_each(|v| *v = s);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                self.accumulate(grads, *x, Tensor::filled(xv.rows(), xv.cols(), g.item()));
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let s = g.item() / xv.len() as f64;
                self.accumulate(grads, *x, Tensor::filled(xv.rows(), xv.cols(), s));
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let scale = g.item() / targets.len() as f64;
                let mut gl = probs.clone();
                for (r, &t) in targets.iter().enumerate() {
                    gl.row_mut(r)[t] -= 1.0;
                    gl.row_mut(r).iter_mut().for_each(|v| *v *= scale);
                }
                self.accumulate(grads, *logits, gl);
            }
        }
    }
}

fn column_sums(g: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, v) in out.data_mut().iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn segment_softmax_values(scores: &[f64], segments: &[usize]) -> Vec<f64> {
    let n_seg = segments.iter().copied().max().map_or(0, |m| m + 1);
    let mut max = vec![f64::NEG_INFINITY; n_seg];
    for (&s, &v) in segments.iter().zip(scores) {
        max[s] = max[s].max(v);
    }
    let mut out: Vec<f64> = segments
        .iter()
        .zip(scores)
        .map(|(&s, &v)| (v - max[s]).exp())
        .collect();
    let mut totals = vec![0.0; n_seg];
    for (&s, &v) in segments.iter().zip(&out) {
        totals[s] += v;
    }
    for (o, &s) in out.iter_mut().zip(segments) {
        *o /= totals[s];
    }
    out
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    let inner = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_sum_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row_vector(vec![1.0, 2.0]));
        let sq = tape.mul(x, x);
        let y = tape.sum(sq);
        let grads = tape.backward(y);
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let c = tape.constant(Tensor::scalar(2.0));
        let y = tape.mul(x, c);
        let grads = tape.backward(y);
        assert_eq!(grads.get(x).unwrap().item(), 2.0);
        assert!(grads.get(c).is_none());
    }

    #[test]
    fn segment_softmax_groups_independently() {
        let mut tape = Tape::new();
        let s = tape.constant(Tensor::from_vec(4, 1, vec![0.0, 0.0, 5.0, 1.0]).unwrap());
        let a = tape.segment_softmax(s, &[0, 0, 1, 2]);
        assert_eq!(tape.value(a).data(), &[0.5, 0.5, 1.0, 1.0]);
    }

    #[test]
    fn cross_entropy_uniform_is_ln_classes() {
        let mut tape = Tape::new();
        let l = tape.constant(Tensor::zeros(1, 2));
        let ce = tape.cross_entropy(l, &[1]);
        assert!((tape.value(ce).item() - 2f64.ln()).abs() < 1e-15);
    }
}
