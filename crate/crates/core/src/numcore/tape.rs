//! Reverse-mode automatic differentiation over whole matrices.
//!
//! A [`Tape`] records every operation as a node holding its value and the
//! operation that produced it. Nodes are appended in evaluation order, so the
//! tape is already topologically sorted and [`Tape::backward`] walks it once
//! in reverse.
//!
//! Shape errors inside tape operations are programming errors and panic;
//! public layer entry points validate shapes before building a tape.

use std::rc::Rc;

use crate::numcore::matrix::gemm;
use crate::numcore::Matrix;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// `x + 1·b` with `b` a `1×c` row.
    AddRow(Var, Var),
    /// Row `i` of `x` times `s[i]`, `s` is `r×1`.
    MulCol(Var, Var),
    /// Column `j` of `x` times `s[j]`, `s` is `1×c`.
    MulRow(Var, Var),
    Transpose(Var),
    LeakyRelu(Var, f64),
    Elu(Var),
    Relu(Var),
    Powf(Var, f64),
    RecipOrZero(Var),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Gather(Var, Rc<[usize]>),
    ScatterAdd(Var, Rc<[usize]>),
    SegmentSoftmax(Var, Rc<[usize]>, usize),
    SoftmaxRows(Var),
    RowSum(Var),
    Sum(Var),
    WeightedSum(Var, Rc<Vec<Matrix>>),
    CrossEntropy(Var, Rc<[usize]>),
    BceWithLogits(Var, Rc<[f64]>),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Operation recorder for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` did not influence the output.
    pub fn get(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Matrix {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    fn push_raw(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Matrix, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push_raw(value, op, requires_grad)
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(
            va.cols(),
            vb.rows(),
            "matmul {:?} x {:?}",
            va.shape(),
            vb.shape()
        );
        let out = gemm(va, false, vb, false);
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).add(self.value(b)).expect("add shape");
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).sub(self.value(b)).expect("sub shape");
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).hadamard(self.value(b)).expect("mul shape");
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        self.push(out, Op::Scale(a, s), &[a])
    }

    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(bias));
        assert_eq!(bv.shape(), (1, xv.cols()), "add_row bias shape");
        let mut out = xv.clone();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(x, bias), &[x, bias])
    }

    pub fn mul_col(&mut self, x: Var, s: Var) -> Var {
        let (xv, sv) = (self.value(x), self.value(s));
        assert_eq!(sv.shape(), (xv.rows(), 1), "mul_col scale shape");
        let mut out = xv.clone();
        for i in 0..out.rows() {
            let f = sv.data()[i];
            out.row_mut(i).iter_mut().for_each(|o| *o *= f);
        }
        self.push(out, Op::MulCol(x, s), &[x, s])
    }

    pub fn mul_row(&mut self, x: Var, s: Var) -> Var {
        let (xv, sv) = (self.value(x), self.value(s));
        assert_eq!(sv.shape(), (1, xv.cols()), "mul_row scale shape");
        let mut out = xv.clone();
        for i in 0..out.rows() {
            for (o, f) in out.row_mut(i).iter_mut().zip(sv.data()) {
                *o *= f;
            }
        }
        self.push(out, Op::MulRow(x, s), &[x, s])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(out, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(elu);
        self.push(out, Op::Elu(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        let out = self.value(a).map(|x| x.powf(p));
        self.push(out, Op::Powf(a, p), &[a])
    }

    /// `1/x`, with `0` mapped to `0`.
    pub fn recip_or_zero(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x == 0.0 { 0.0 } else { 1.0 / x });
        self.push(out, Op::RecipOrZero(a), &[a])
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let out = self.value(a).slice_cols(start, end);
        self.push(out, Op::SliceCols(a, start, end), &[a])
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a);
        assert!(start <= end && end <= v.rows());
        let out = Matrix::from_vec(
            end - start,
            v.cols(),
            v.data()[start * v.cols()..end * v.cols()].to_vec(),
        )
        .expect("slice_rows");
        self.push(out, Op::SliceRows(a, start, end), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        if parts.len() == 1 {
            return parts[0];
        }
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Matrix::hcat(&mats).expect("concat_cols rows");
        self.push(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        if parts.len() == 1 {
            return parts[0];
        }
        let cols = self.shape(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols(), cols, "concat_rows cols");
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let out = Matrix::from_vec(rows, cols, data).expect("concat_rows");
        self.push(out, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Row `k` of the output is row `idx[k]` of `a`.
    pub fn gather(&mut self, a: Var, idx: Rc<[usize]>) -> Var {
        let out = self.value(a).select_rows(&idx);
        self.push(out, Op::Gather(a, idx), &[a])
    }

    /// Row `idx[k]` of the `n`-row output accumulates row `k` of `a`.
    pub fn scatter_add(&mut self, a: Var, idx: Rc<[usize]>, n: usize) -> Var {
        let v = self.value(a);
        assert_eq!(v.rows(), idx.len(), "scatter_add index length");
        let mut out = Matrix::zeros(n, v.cols());
        for (k, &i) in idx.iter().enumerate() {
            for (o, x) in out.row_mut(i).iter_mut().zip(v.row(k)) {
                *o += x;
            }
        }
        self.push(out, Op::ScatterAdd(a, idx), &[a])
    }

    /// Softmax over the rows sharing a group id, independently per column.
    /// Used for attention over in-neighbours where row `k` is an edge and
    /// `groups[k]` its destination.
    pub fn segment_softmax(&mut self, a: Var, groups: Rc<[usize]>, n_groups: usize) -> Var {
        let out = segment_softmax(self.value(a), &groups, n_groups);
        self.push(out, Op::SegmentSoftmax(a, groups, n_groups), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = crate::numcore::softmax_rows(self.value(a), None).values;
        self.push(out, Op::SoftmaxRows(a), &[a])
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let out = Matrix::column(&self.value(a).row_sums());
        self.push(out, Op::RowSum(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::filled(1, 1, self.value(a).sum());
        self.push(out, Op::Sum(a), &[a])
    }

    /// `Σ_k w[k]·mats[k]` with `w` a `1×K` row and constant matrices.
    pub fn weighted_sum(&mut self, w: Var, mats: Rc<Vec<Matrix>>) -> Var {
        let wv = self.value(w);
        assert_eq!(wv.shape(), (1, mats.len()), "weighted_sum weight shape");
        let (r, c) = mats[0].shape();
        let mut out = Matrix::zeros(r, c);
        for (k, m) in mats.iter().enumerate() {
            let f = wv.data()[k];
            if f == 0.0 {
                continue;
            }
            for (o, x) in out.data_mut().iter_mut().zip(m.data()) {
                *o += f * x;
            }
        }
        self.push(out, Op::WeightedSum(w, mats), &[w])
    }

    /// Mean softmax cross-entropy of each logit row against its target class.
    pub fn cross_entropy(&mut self, logits: Var, targets: Rc<[usize]>) -> Var {
        let z = self.value(logits);
        assert_eq!(z.rows(), targets.len());
        let n = targets.len().max(1) as f64;
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = z.row(i);
            total += log_sum_exp(row) - row[t];
        }
        let out = Matrix::filled(1, 1, total / n);
        self.push(out, Op::CrossEntropy(logits, targets), &[logits])
    }

    /// Mean binary cross-entropy of an `r×1` score column taken as logits.
    pub fn bce_with_logits(&mut self, scores: Var, labels: Rc<[f64]>) -> Var {
        let s = self.value(scores);
        assert_eq!(s.shape(), (labels.len(), 1));
        let n = labels.len().max(1) as f64;
        let total: f64 = s
            .data()
            .iter()
            .zip(labels.iter())
            .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
            .sum();
        let out = Matrix::filled(1, 1, total / n);
        self.push(out, Op::BceWithLogits(scores, labels), &[scores])
    }

    /// Back-propagates from the `1×1` node `output`.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.shape(output), (1, 1), "backward needs a scalar output");
        let n = output.0 + 1;
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Matrix::filled(1, 1, 1.0));

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        }
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                if self.wants(a) {
                    let ga = gemm(g, false, self.value(b), true);
                    self.accumulate(grads, a, ga);
                }
                if self.wants(b) {
                    let gb = gemm(self.value(a), true, g, false);
                    self.accumulate(grads, b, gb);
                }
            }
            &Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.clone());
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.scale(-1.0));
            }
            &Op::Mul(a, b) => {
                if self.wants(a) {
                    self.accumulate(grads, a, g.hadamard(self.value(b)).unwrap());
                }
                if self.wants(b) {
                    self.accumulate(grads, b, g.hadamard(self.value(a)).unwrap());
                }
            }
            &Op::Scale(a, s) => self.accumulate(grads, a, g.scale(s)),
            &Op::AddRow(x, b) => {
                self.accumulate(grads, x, g.clone());
                if self.wants(b) {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    self.accumulate(grads, b, gb);
                }
            }
            &Op::MulCol(x, s) => {
                let (xv, sv) = (self.value(x), self.value(s));
                if self.wants(x) {
                    let mut gx = g.clone();
                    for r in 0..gx.rows() {
                        let f = sv.data()[r];
                        gx.row_mut(r).iter_mut().for_each(|o| *o *= f);
                    }
                    self.accumulate(grads, x, gx);
                }
                if self.wants(s) {
                    let gs = (0..g.rows())
                        .map(|r| g.row(r).iter().zip(xv.row(r)).map(|(a, b)| a * b).sum())
                        .collect::<Vec<f64>>();
                    self.accumulate(grads, s, Matrix::column(&gs));
                }
            }
            &Op::MulRow(x, s) => {
                let (xv, sv) = (self.value(x), self.value(s));
                if self.wants(x) {
                    let mut gx = g.clone();
                    for r in 0..gx.rows() {
                        for (o, f) in gx.row_mut(r).iter_mut().zip(sv.data()) {
                            *o *= f;
                        }
                    }
                    self.accumulate(grads, x, gx);
                }
                if self.wants(s) {
                    let mut gs = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for ((o, a), b) in gs.data_mut().iter_mut().zip(g.row(r)).zip(xv.row(r)) {
                            *o += a * b;
                        }
                    }
                    self.accumulate(grads, s, gs);
                }
            }
            &Op::Transpose(a) => self.accumulate(grads, a, g.transpose()),
            &Op::LeakyRelu(a, slope) => {
                let gx = self
                    .value(a)
                    .zip_with(g, |x, d| if x > 0.0 { d } else { slope * d })
                    .unwrap();
                self.accumulate(grads, a, gx);
            }
            &Op::Elu(a) => {
                let gx = self
                    .value(a)
                    .zip_with(g, |x, d| if x > 0.0 { d } else { x.exp() * d })
                    .unwrap();
                self.accumulate(grads, a, gx);
            }
            &Op::Relu(a) => {
                let gx = self
                    .value(a)
                    .zip_with(g, |x, d| if x > 0.0 { d } else { 0.0 })
                    .unwrap();
                self.accumulate(grads, a, gx);
            }
            &Op::Powf(a, p) => {
                let gx = self
                    .value(a)
                    .zip_with(g, |x, d| p * x.powf(p - 1.0) * d)
                    .unwrap();
                self.accumulate(grads, a, gx);
            }
            &Op::RecipOrZero(a) => {
                let gx = self
                    .value(a)
                    .zip_with(g, |x, d| if x == 0.0 { 0.0 } else { -d / (x * x) })
                    .unwrap();
                self.accumulate(grads, a, gx);
            }
            &Op::SliceCols(a, start, end) => {
                let (r, c) = self.shape(a);
                let mut gx = Matrix::zeros(r, c);
                for i in 0..r {
                    gx.row_mut(i)[start..end].copy_from_slice(g.row(i));
                }
                self.accumulate(grads, a, gx);
            }
            &Op::SliceRows(a, start, end) => {
                let (r, c) = self.shape(a);
                let mut gx = Matrix::zeros(r, c);
                gx.data_mut()[start * c..end * c].copy_from_slice(g.data());
                self.accumulate(grads, a, gx);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    if self.wants(p) {
                        self.accumulate(grads, p, g.slice_cols(offset, offset + w));
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let r = self.shape(p).0;
                    if self.wants(p) {
                        let part =
                            Matrix::from_vec(r, c, g.data()[offset * c..(offset + r) * c].to_vec())
                                .unwrap();
                        self.accumulate(grads, p, part);
                    }
                    offset += r;
                }
            }
            Op::Gather(a, idx) => {
                let (r, c) = self.shape(*a);
                let mut gx = Matrix::zeros(r, c);
                for (k, &row) in idx.iter().enumerate() {
                    for (o, v) in gx.row_mut(row).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                self.accumulate(grads, *a, gx);
            }
            Op::ScatterAdd(a, idx) => {
                self.accumulate(grads, *a, g.select_rows(idx));
            }
            Op::SegmentSoftmax(a, groups, n_groups) => {
                let cols = g.cols();
                let mut dots = vec![0.0; n_groups * cols];
                for (k, &grp) in groups.iter().enumerate() {
                    for j in 0..cols {
                        dots[grp * cols + j] += out[(k, j)] * g[(k, j)];
                    }
                }
                let gx = Matrix::from_fn(g.rows(), cols, |k, j| {
                    out[(k, j)] * (g[(k, j)] - dots[groups[k] * cols + j])
                });
                self.accumulate(grads, *a, gx);
            }
            &Op::SoftmaxRows(a) => {
                let mut gx = Matrix::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let dot: f64 = out.row(r).iter().zip(g.row(r)).map(|(y, d)| y * d).sum();
                    for j in 0..out.cols() {
                        gx[(r, j)] = out[(r, j)] * (g[(r, j)] - dot);
                    }
                }
                self.accumulate(grads, a, gx);
            }
            &Op::RowSum(a) => {
                let (r, c) = self.shape(a);
                let gx = Matrix::from_fn(r, c, |i, _| g.data()[i]);
                self.accumulate(grads, a, gx);
            }
            &Op::Sum(a) => {
                let (r, c) = self.shape(a);
                self.accumulate(grads, a, Matrix::filled(r, c, g.data()[0]));
            }
            Op::WeightedSum(w, mats) => {
                let gw: Vec<f64> = mats
                    .iter()
                    .map(|m| m.data().iter().zip(g.data()).map(|(a, b)| a * b).sum())
                    .collect();
                self.accumulate(grads, *w, Matrix::from_vec(1, gw.len(), gw).unwrap());
            }
            Op::CrossEntropy(logits, targets) => {
                let z = self.value(*logits);
                let n = targets.len().max(1) as f64;
                let scale = g.data()[0] / n;
                let mut gx = Matrix::zeros(z.rows(), z.cols());
                for (i, &t) in targets.iter().enumerate() {
                    let row = z.row(i);
                    let lse = log_sum_exp(row);
                    for j in 0..z.cols() {
                        let p = (row[j] - lse).exp();
                        gx[(i, j)] = scale * (p - if j == t { 1.0 } else { 0.0 });
                    }
                }
                self.accumulate(grads, *logits, gx);
            }
            Op::BceWithLogits(scores, labels) => {
                let s = self.value(*scores);
                let n = labels.len().max(1) as f64;
                let scale = g.data()[0] / n;
                let gx: Vec<f64> = s
                    .data()
                    .iter()
                    .zip(labels.iter())
                    .map(|(&x, &y)| scale * (sigmoid(x) - y))
                    .collect();
                self.accumulate(grads, *scores, Matrix::column(&gx));
            }
        }
    }
}

#[inline]
pub(crate) fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
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

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn segment_softmax(a: &Matrix, groups: &[usize], n_groups: usize) -> Matrix {
    assert_eq!(a.rows(), groups.len(), "segment_softmax group length");
    let cols = a.cols();
    let mut maxes = vec![f64::NEG_INFINITY; n_groups * cols];
    for (k, &grp) in groups.iter().enumerate() {
        for j in 0..cols {
            let m = &mut maxes[grp * cols + j];
            *m = m.max(a[(k, j)]);
        }
    }
    let mut out = Matrix::zeros(a.rows(), cols);
    let mut sums = vec![0.0; n_groups * cols];
    for (k, &grp) in groups.iter().enumerate() {
        for j in 0..cols {
            let e = (a[(k, j)] - maxes[grp * cols + j]).exp();
            out[(k, j)] = e;
            sums[grp * cols + j] += e;
        }
    }
    for (k, &grp) in groups.iter().enumerate() {
        for j in 0..cols {
            out[(k, j)] /= sums[grp * cols + j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::grad_check;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    /// Runs `build` on a fresh tape with `x` as the only parameter and
    /// returns the max relative gradient error against central differences.
    fn check(x: Matrix, build: impl Fn(&mut Tape, Var) -> Var) -> f64 {
        let shape = x.shape();
        let f = |theta: &[f64]| {
            let mut tape = Tape::new();
            let v = tape.param(Matrix::from_vec(shape.0, shape.1, theta.to_vec()).unwrap());
            let out = build(&mut tape, v);
            let value = tape.value(out).data()[0];
            let grads = tape.backward(out);
            (value, grads.get(v).into_vec())
        };
        grad_check(f, x.data(), 1e-5).unwrap()
    }

    fn weights(r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.3 - 0.6)
    }

    #[test]
    fn matmul_add_and_activations() {
        let x = Matrix::from_fn(3, 4, |i, j| (i as f64 - j as f64) * 0.37 + 0.05);
        let err = check(x, |t, v| {
            let w = t.constant(weights(4, 2));
            let y = t.matmul(v, w);
            let b = t.constant(weights(1, 2));
            let y = t.add_row(y, b);
            let y = t.elu(y);
            let z = t.leaky_relu(y, 0.2);
            let r = t.constant(weights(3, 2));
            let z = t.mul(z, r);
            t.sum(z)
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn broadcasts_and_pow() {
        let x = Matrix::from_fn(3, 3, |i, j| 1.0 + (i * 3 + j) as f64 * 0.1);
        let err = check(x, |t, v| {
            let d = t.row_sum(v);
            let s = t.powf(d, -0.5);
            let y = t.mul_col(v, s);
            let st = t.transpose(s);
            let y = t.mul_row(y, st);
            let r = t.recip_or_zero(y);
            let sq = t.mul(r, r);
            t.sum(sq)
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn gather_scatter_segment_softmax() {
        let idx: Rc<[usize]> = Rc::from(vec![0, 2, 2, 1, 0]);
        let groups: Rc<[usize]> = Rc::from(vec![1, 1, 0, 2, 2]);
        let x = Matrix::from_fn(3, 2, |i, j| (i as f64) * 0.4 - (j as f64) * 0.9);
        let err = check(x, |t, v| {
            let e = t.gather(v, idx.clone());
            let a = t.segment_softmax(e, groups.clone(), 3);
            let msg = t.gather(v, idx.clone());
            let sc = t.slice_cols(a, 0, 1);
            let w = t.mul_col(msg, sc);
            let agg = t.scatter_add(w, groups.clone(), 3);
            let r = t.constant(weights(3, 2));
            let z = t.mul(agg, r);
            t.sum(z)
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn concat_slice_softmax_rows_weighted_sum() {
        let mats = Rc::new(vec![
            weights(2, 2),
            Matrix::identity(2),
            weights(2, 2).transpose(),
        ]);
        let x = Matrix::from_rows(&[vec![0.3, -0.2, 0.9]]);
        let err = check(x, |t, v| {
            let p = t.softmax_rows(v);
            let a = t.weighted_sum(p, mats.clone());
            let b = t.concat_cols(&[a, a]);
            let c = t.concat_rows(&[b, b]);
            let d = t.slice_rows(c, 1, 3);
            let e = t.slice_cols(d, 1, 3);
            let f = t.matmul(e, e);
            t.sum(f)
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn losses() {
        let x = m(&[&[0.2, -1.0, 0.5], &[1.5, 0.1, -0.3]]);
        let targets: Rc<[usize]> = Rc::from(vec![2, 0]);
        assert!(check(x.clone(), |t, v| t.cross_entropy(v, targets.clone())) < 1e-6);
        let s = m(&[&[0.7], &[-2.0], &[0.1]]);
        let labels: Rc<[f64]> = Rc::from(vec![1.0, 0.0, 1.0]);
        assert!(check(s, |t, v| t.bce_with_logits(v, labels.clone())) < 1e-6);
    }

    #[test]
    fn uniform_cross_entropy_is_ln_classes() {
        let mut t = Tape::new();
        let z = t.constant(Matrix::zeros(3, 4));
        let l = t.cross_entropy(z, Rc::from(vec![0, 1, 3]));
        assert!((t.value(l).data()[0] - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Matrix::filled(2, 2, 1.0));
        let p = t.param(Matrix::filled(2, 2, 2.0));
        let y = t.mul(c, p);
        let s = t.sum(y);
        let g = t.backward(s);
        assert_eq!(g.get(p), Matrix::filled(2, 2, 1.0));
        assert_eq!(g.get(c), Matrix::zeros(2, 2));
    }

    #[test]
    fn shared_subexpression_accumulates() {
        let mut t = Tape::new();
        let x = t.param(Matrix::filled(1, 1, 3.0));
        let y = t.mul(x, x);
        let z = t.add(y, x);
        let g = t.backward(z);
        assert_eq!(g.get(x).data()[0], 7.0);
    }
}
