//! Reverse-mode automatic differentiation over [`Mat`] values.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters are
//! referenced from a borrowed [`ParamStore`] rather than copied, so a graph is
//! cheap to build per batch. Inference uses the same graph with gradient
//! tracking disabled.

use std::collections::HashMap;

use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm, Mat, Operand};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value {
    Owned(Mat),
    Param(ParamId),
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    RepeatCols(Var, usize),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    LeakyRelu(Var, f64),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNormRows(Var, f64),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Transpose(Var),
    Gather {
        src: Var,
        index: Vec<Option<usize>>,
        group: usize,
    },
    SegmentMax {
        src: Var,
        argmax: Vec<Option<usize>>,
    },
    Sum(Var),
    BceWithLogits {
        logits: Var,
        targets: Vec<f64>,
        mask: Vec<bool>,
    },
}

struct Node {
    value: Value,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    track: bool,
}

/// Gradients of one backward pass, indexed by graph node.
pub struct Gradients {
    grads: Vec<Option<Mat>>,
    param_vars: HashMap<ParamId, Var>,
}

impl Gradients {
    pub fn wrt(&self, var: Var) -> Option<&Mat> {
        self.grads[var.0].as_ref()
    }

    pub fn wrt_param(&self, id: ParamId) -> Option<&Mat> {
        self.param_vars.get(&id).and_then(|v| self.wrt(*v))
    }

    /// Moves parameter gradients into a vector indexed by [`ParamId`].
    pub fn into_param_grads(mut self, num_params: usize) -> Vec<Option<Mat>> {
        let mut out = vec![None; num_params];
        for (id, var) in self.param_vars {
            out[id.0] = self.grads[var.0].take();
        }
        out
    }
}

/// Numerically stable `log(1 + exp(-|x|))` based BCE for one cell.
#[inline]
pub fn bce_with_logit(x: f64, y: f64) -> f64 {
    x.max(0.0) - x * y + (-x.abs()).exp().ln_1p()
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

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

impl<'p> Graph<'p> {
    /// A graph that records backward information.
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            track: true,
        }
    }

    /// A graph for inference only; [`Graph::backward`] panics on it.
    pub fn inference(params: &'p ParamStore) -> Self {
        Graph {
            track: false,
            ..Graph::new(params)
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn value(&self, v: Var) -> &Mat {
        match &self.nodes[v.0].value {
            Value::Owned(m) => m,
            Value::Param(id) => self.params.get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        let op = if self.track { op } else { Op::Leaf };
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_nt(self.value(b));
        self.push(out, Op::MatMulNt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape());
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Mat::from_vec(x.rows(), x.cols(), data);
        self.push(out, Op::Mul(a, b))
    }

    /// Adds a `1 × c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        assert_eq!(r.rows(), 1);
        assert_eq!(x.cols(), r.cols());
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    /// Multiplies every row of `a` elementwise by a `1 × c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        assert_eq!(r.rows(), 1);
        assert_eq!(x.cols(), r.cols());
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(r.data()) {
                *o *= b;
            }
        }
        self.push(out, Op::MulRow(a, row))
    }

    /// Repeats each column `times` times: column `k` fills `k·times .. (k+1)·times`.
    pub fn repeat_cols(&mut self, a: Var, times: usize) -> Var {
        let x = self.value(a);
        let mut out = Mat::zeros(x.rows(), x.cols() * times);
        for i in 0..x.rows() {
            for k in 0..x.cols() {
                let v = x.get(i, k);
                out.row_mut(i)[k * times..(k + 1) * times].fill(v);
            }
        }
        self.push(out, Op::RepeatCols(a, times))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v * s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(out, Op::LeakyRelu(a, slope))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        self.push(out, Op::Gelu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Normalises each row to zero mean and unit variance (no affine part).
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let (mean, inv_std) = row_moments(row, eps);
            for v in row.iter_mut() {
                *v = (*v - mean) * inv_std;
            }
        }
        self.push(out, Op::LayerNormRows(a, eps))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Mat::zeros(rows, cols);
        let mut offset = 0;
        for p in parts {
            let x = self.value(*p);
            assert_eq!(x.rows(), rows, "concat_cols row mismatch");
            for i in 0..rows {
                out.row_mut(i)[offset..offset + x.cols()].copy_from_slice(x.row(i));
            }
            offset += x.cols();
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let x = self.value(*p);
            assert_eq!(x.cols(), cols, "concat_rows col mismatch");
            data.extend_from_slice(x.data());
            rows += x.rows();
        }
        self.push(Mat::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.cols());
        let mut out = Mat::zeros(x.rows(), len);
        for i in 0..x.rows() {
            out.row_mut(i).copy_from_slice(&x.row(i)[start..start + len]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.rows());
        let c = x.cols();
        let out = Mat::from_vec(len, c, x.data()[start * c..(start + len) * c].to_vec());
        self.push(out, Op::SliceRows(a, start))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    /// Builds rows by concatenating `group` source rows each; `None` selects a zero row.
    ///
    /// With `group == 1` this is an embedding lookup or a row broadcast; with
    /// `group == k` it unfolds length-`k` convolution windows.
    pub fn gather(&mut self, src: Var, index: Vec<Option<usize>>, group: usize) -> Var {
        assert!(group > 0 && index.len().is_multiple_of(group));
        let x = self.value(src);
        let c = x.cols();
        let rows = index.len() / group;
        let mut out = Mat::zeros(rows, c * group);
        for (slot, idx) in index.iter().enumerate() {
            if let Some(r) = idx {
                let (row, part) = (slot / group, slot % group);
                out.row_mut(row)[part * c..(part + 1) * c].copy_from_slice(x.row(*r));
            }
        }
        self.push(out, Op::Gather { src, index, group })
    }

    /// Column-wise max over each row segment `(start, len)`; empty segments give zeros.
    pub fn segment_max(&mut self, src: Var, segments: &[(usize, usize)]) -> Var {
        let x = self.value(src);
        let c = x.cols();
        let mut out = Mat::zeros(segments.len(), c);
        let mut argmax = vec![None; segments.len() * c];
        for (s, &(start, len)) in segments.iter().enumerate() {
            for col in 0..c {
                let mut best: Option<(usize, f64)> = None;
                for r in start..start + len {
                    let v = x.get(r, col);
                    if best.is_none_or(|(_, b)| v > b) {
                        best = Some((r, v));
                    }
                }
                if let Some((r, v)) = best {
                    out.set(s, col, v);
                    argmax[s * c + col] = Some(r);
                }
            }
        }
        self.push(out, Op::SegmentMax { src, argmax })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Mat::scalar(s), Op::Sum(a))
    }

    /// Summed binary cross-entropy over cells where `mask` is set, computed from logits.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Vec<f64>, mask: Vec<bool>) -> Var {
        let x = self.value(logits);
        assert_eq!(x.len(), targets.len());
        assert_eq!(x.len(), mask.len());
        let total: f64 = x
            .data()
            .iter()
            .zip(&targets)
            .zip(&mask)
            .filter(|(_, m)| **m)
            .map(|((v, y), _)| bce_with_logit(*v, *y))
            .sum();
        self.push(
            Mat::scalar(total),
            Op::BceWithLogits {
                logits,
                targets,
                mask,
            },
        )
    }

    /// Backpropagates from a `1 × 1` output.
    pub fn backward(&self, output: Var) -> Gradients {
        assert!(self.track, "backward on an inference graph");
        assert_eq!(self.shape(output), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Mat::scalar(1.0));
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients {
            grads,
            param_vars: self.param_vars.clone(),
        }
    }

    fn backprop_node(&self, i: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let out = self.value(Var(i));
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                accumulate_gemm(grads, *a, Operand::plain(g), Operand::transposed(y));
                accumulate_gemm(grads, *b, Operand::transposed(x), Operand::plain(g));
            }
            Op::MatMulNt(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                accumulate_gemm(grads, *a, Operand::plain(g), Operand::plain(y));
                accumulate_gemm(grads, *b, Operand::transposed(g), Operand::plain(x));
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g);
                accumulate(grads, *b, g);
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                accumulate(grads, *a, &zip_map(g, y, |p, q| p * q));
                accumulate(grads, *b, &zip_map(g, x, |p, q| p * q));
            }
            Op::AddRow(a, row) => {
                accumulate(grads, *a, g);
                accumulate(grads, *row, &col_sums(g));
            }
            Op::MulRow(a, row) => {
                let (x, r) = (self.value(*a), self.value(*row));
                let mut ga = g.clone();
                for i in 0..ga.rows() {
                    for (o, s) in ga.row_mut(i).iter_mut().zip(r.data()) {
                        *o *= s;
                    }
                }
                accumulate(grads, *a, &ga);
                accumulate(grads, *row, &col_sums(&zip_map(g, x, |p, q| p * q)));
            }
            Op::RepeatCols(a, times) => {
                let x = self.value(*a);
                let mut ga = Mat::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    for k in 0..x.cols() {
                        let s: f64 = g.row(i)[k * times..(k + 1) * times].iter().sum();
                        ga.set(i, k, s);
                    }
                }
                accumulate(grads, *a, &ga);
            }
            Op::Scale(a, s) => accumulate(grads, *a, &g.map(|v| v * s)),
            Op::Tanh(a) => accumulate(grads, *a, &zip_map(g, out, |p, y| p * (1.0 - y * y))),
            Op::Sigmoid(a) => accumulate(grads, *a, &zip_map(g, out, |p, y| p * y * (1.0 - y))),
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a);
                accumulate(
                    grads,
                    *a,
                    &zip_map(g, x, |p, v| if v > 0.0 { p } else { p * slope }),
                );
            }
            Op::Gelu(a) => {
                let x = self.value(*a);
                accumulate(grads, *a, &zip_map(g, x, |p, v| p * gelu_grad(v)));
            }
            Op::SoftmaxRows(a) => {
                let mut ga = Mat::zeros(out.rows(), out.cols());
                for i in 0..out.rows() {
                    let (y, gy) = (out.row(i), g.row(i));
                    let dot: f64 = y.iter().zip(gy).map(|(p, q)| p * q).sum();
                    for ((o, yv), gv) in ga.row_mut(i).iter_mut().zip(y).zip(gy) {
                        *o = yv * (gv - dot);
                    }
                }
                accumulate(grads, *a, &ga);
            }
            Op::LayerNormRows(a, eps) => {
                let x = self.value(*a);
                let c = x.cols() as f64;
                let mut ga = Mat::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    let (_, inv_std) = row_moments(x.row(i), *eps);
                    let (y, gy) = (out.row(i), g.row(i));
                    let mean_g = gy.iter().sum::<f64>() / c;
                    let mean_gy = y.iter().zip(gy).map(|(p, q)| p * q).sum::<f64>() / c;
                    for ((o, yv), gv) in ga.row_mut(i).iter_mut().zip(y).zip(gy) {
                        *o = inv_std * (gv - mean_g - yv * mean_gy);
                    }
                }
                accumulate(grads, *a, &ga);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let (rows, cols) = self.shape(*p);
                    let mut gp = Mat::zeros(rows, cols);
                    for r in 0..rows {
                        gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                    }
                    accumulate(grads, *p, &gp);
                    offset += cols;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let (rows, cols) = self.shape(*p);
                    let gp = Mat::from_vec(
                        rows,
                        cols,
                        g.data()[offset * cols..(offset + rows) * cols].to_vec(),
                    );
                    accumulate(grads, *p, &gp);
                    offset += rows;
                }
            }
            Op::SliceCols(a, start) => {
                let (rows, cols) = self.shape(*a);
                let slot = grads[a.0].get_or_insert_with(|| Mat::zeros(rows, cols));
                for r in 0..rows {
                    for (o, v) in slot.row_mut(r)[*start..*start + g.cols()].iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
            }
            Op::SliceRows(a, start) => {
                let (rows, cols) = self.shape(*a);
                let slot = grads[a.0].get_or_insert_with(|| Mat::zeros(rows, cols));
                let dst = &mut slot.data_mut()[start * cols..(start + g.rows()) * cols];
                for (o, v) in dst.iter_mut().zip(g.data()) {
                    *o += v;
                }
            }
            Op::Transpose(a) => accumulate(grads, *a, &g.transpose()),
            Op::Gather { src, index, group } => {
                let (rows, cols) = self.shape(*src);
                let slot = grads[src.0].get_or_insert_with(|| Mat::zeros(rows, cols));
                for (k, idx) in index.iter().enumerate() {
                    if let Some(r) = idx {
                        let (row, part) = (k / group, k % group);
                        let gv = &g.row(row)[part * cols..(part + 1) * cols];
                        for (o, v) in slot.row_mut(*r).iter_mut().zip(gv) {
                            *o += v;
                        }
                    }
                }
            }
            Op::SegmentMax { src, argmax } => {
                let (rows, cols) = self.shape(*src);
                let slot = grads[src.0].get_or_insert_with(|| Mat::zeros(rows, cols));
                for (k, arg) in argmax.iter().enumerate() {
                    if let Some(r) = arg {
                        let col = k % cols;
                        let v = slot.get(*r, col) + g.data()[k];
                        slot.set(*r, col, v);
                    }
                }
            }
            Op::Sum(a) => {
                let (rows, cols) = self.shape(*a);
                accumulate(grads, *a, &Mat::filled(rows, cols, g.get(0, 0)));
            }
            Op::BceWithLogits {
                logits,
                targets,
                mask,
            } => {
                let x = self.value(*logits);
                let scale = g.get(0, 0);
                let data = x
                    .data()
                    .iter()
                    .zip(targets)
                    .zip(mask)
                    .map(|((v, y), m)| if *m { scale * (sigmoid(*v) - y) } else { 0.0 })
                    .collect();
                accumulate(grads, *logits, &Mat::from_vec(x.rows(), x.cols(), data));
            }
        }
    }
}

fn row_moments(row: &[f64], eps: f64) -> (f64, f64) {
    let c = row.len() as f64;
    let mean = row.iter().sum::<f64>() / c;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
    (mean, 1.0 / (var + eps).sqrt())
}

fn zip_map(a: &Mat, b: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
    let data = a.data().iter().zip(b.data()).map(|(p, q)| f(*p, *q)).collect();
    Mat::from_vec(a.rows(), a.cols(), data)
}

fn col_sums(g: &Mat) -> Mat {
    let mut out = Mat::zeros(1, g.cols());
    for i in 0..g.rows() {
        for (o, v) in out.data_mut().iter_mut().zip(g.row(i)) {
            *o += v;
        }
    }
    out
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: &Mat) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(g),
        slot @ None => *slot = Some(g.clone()),
    }
}

fn accumulate_gemm(grads: &mut [Option<Mat>], v: Var, a: Operand<'_>, b: Operand<'_>) {
    match &mut grads[v.0] {
        Some(existing) => gemm(a, b, existing, 1.0),
        slot @ None => {
            let (m, n) = gemm_dims(&a, &b);
            let mut out = Mat::zeros(m, n);
            gemm(a, b, &mut out, 0.0);
            *slot = Some(out);
        }
    }
}

fn gemm_dims(a: &Operand<'_>, b: &Operand<'_>) -> (usize, usize) {
    (a.out_rows(), b.out_cols())
}
