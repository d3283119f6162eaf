//! Reverse-mode tape.
//!
//! Nodes are appended in evaluation order, so the node vector is already a
//! topological order and `backward` is a single reverse sweep. Nodes whose
//! inputs do not require gradients carry no backward rule.

use std::sync::Arc;

use rand::Rng as _;

use super::matrix::{matmul, matmul_nt, matmul_tn, Matrix};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulScalar(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Elu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Log(Var),
    Powf(Var, f64),
    SoftmaxRows(Var),
    MaskedSoftmax(Var),
    EdgeSoftmax {
        scores: Var,
        seg: Arc<Vec<usize>>,
        n_seg: usize,
    },
    SpMM {
        rows: Arc<Vec<usize>>,
        cols: Arc<Vec<usize>>,
        coef: Var,
        x: Var,
        heads: usize,
    },
    Dropout(Var, Arc<Vec<f64>>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MeanRows(Var),
    SumAll(Var),
    GatherRows(Var, Arc<Vec<usize>>),
    Column(Var, usize),
    CrossEntropy(Var, Arc<Vec<usize>>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Arc<Matrix>,
    requires_grad: bool,
    op: Op,
}

/// Ordered record of primitive operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` required gradients and
    /// influenced the loss.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Like [`get`](Self::get) but returns zeros when the loss does not
    /// depend on `v`.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Matrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn same_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
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

    fn push(&mut self, value: Matrix, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value: Arc::new(value),
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf value.
    pub fn leaf(&mut self, value: impl Into<Arc<Matrix>>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: value.into(),
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: impl Into<Arc<Matrix>>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: impl Into<Arc<Matrix>>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(Error::dim(
                "matmul",
                format!("{:?} x {:?}", va.shape(), vb.shape()),
            ));
        }
        let out = matmul(va, vb);
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let vb = self.value(b);
        let mut out = self.value(a).clone();
        for (o, y) in out.data_mut().iter_mut().zip(vb.data()) {
            *o -= y;
        }
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    /// Adds a `1 x cols` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if vb.rows() != 1 || vb.cols() != va.cols() {
            return Err(Error::dim(
                "add_row",
                format!("{:?} + row {:?}", va.shape(), vb.shape()),
            ));
        }
        let mut out = va.clone();
        for r in 0..out.rows() {
            for (o, y) in out.row_mut(r).iter_mut().zip(vb.data()) {
                *o += y;
            }
        }
        Ok(self.push(out, Op::AddRow(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let vb = self.value(b);
        let mut out = self.value(a).clone();
        for (o, y) in out.data_mut().iter_mut().zip(vb.data()) {
            *o *= y;
        }
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// Multiplies every entry of `a` by the 1x1 value `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.shape(s) != (1, 1) {
            return Err(Error::dim(
                "mul_scalar",
                format!("scalar operand has shape {:?}", self.shape(s)),
            ));
        }
        let k = self.value(s).item();
        let out = self.value(a).map(|x| x * k);
        Ok(self.push(out, Op::MulScalar(a, s), &[a, s]))
    }

    /// Multiplies row `i` of `a` by `c[i, 0]`.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Result<Var> {
        let (va, vc) = (self.value(a), self.value(c));
        if vc.cols() != 1 || vc.rows() != va.rows() {
            return Err(Error::dim(
                "mul_col",
                format!("{:?} * column {:?}", va.shape(), vc.shape()),
            ));
        }
        let mut out = va.clone();
        for r in 0..out.rows() {
            let k = vc.get(r, 0);
            for o in out.row_mut(r) {
                *o *= k;
            }
        }
        Ok(self.push(out, Op::MulCol(a, c), &[a, c]))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x * k);
        self.push(out, Op::Scale(a, k), &[a])
    }

    pub fn add_const(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x + k);
        self.push(out, Op::AddConst(a), &[a])
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .map(|x| if x > 0.0 { x } else { x.exp_m1() });
        self.push(out, Op::Elu(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self
            .value(a)
            .map(|x| if x > 0.0 { x } else { slope * x });
        self.push(out, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Log(a), &[a])
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        let out = self.value(a).map(|x| x.powf(p));
        self.push(out, Op::Powf(a, p), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let mut out = va.clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        self.push(out, Op::SoftmaxRows(a), &[a])
    }

    /// Row softmax restricted to positions where `mask` is true; masked
    /// positions are exactly zero. A fully masked row is all zeros.
    pub fn masked_softmax(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let va = self.value(a);
        if mask.len() != va.rows() * va.cols() {
            return Err(Error::dim(
                "masked_softmax",
                format!("mask of {} for {:?}", mask.len(), va.shape()),
            ));
        }
        let cols = va.cols();
        let mut out = Matrix::zeros(va.rows(), cols);
        for r in 0..va.rows() {
            let row = va.row(r);
            let m = &mask[r * cols..(r + 1) * cols];
            let max = row
                .iter()
                .zip(m)
                .filter(|(_, &k)| k)
                .fold(f64::NEG_INFINITY, |acc, (&x, _)| acc.max(x));
            if max == f64::NEG_INFINITY {
                continue;
            }
            let orow = out.row_mut(r);
            let mut sum = 0.0;
            for c in 0..cols {
                if m[c] {
                    orow[c] = (row[c] - max).exp();
                    sum += orow[c];
                }
            }
            for o in orow.iter_mut() {
                *o /= sum;
            }
        }
        Ok(self.push(out, Op::MaskedSoftmax(a), &[a]))
    }

    /// Softmax over groups of rows sharing the same segment id, independently
    /// per column (head).
    pub fn edge_softmax(&mut self, scores: Var, seg: Arc<Vec<usize>>, n_seg: usize) -> Result<Var> {
        let vs = self.value(scores);
        if seg.len() != vs.rows() {
            return Err(Error::dim(
                "edge_softmax",
                format!("{} segment ids for {:?}", seg.len(), vs.shape()),
            ));
        }
        if let Some(&bad) = seg.iter().find(|&&s| s >= n_seg) {
            return Err(Error::dim(
                "edge_softmax",
                format!("segment id {bad} >= {n_seg}"),
            ));
        }
        let h = vs.cols();
        let mut max = vec![f64::NEG_INFINITY; n_seg * h];
        for (e, &s) in seg.iter().enumerate() {
            for k in 0..h {
                let m = &mut max[s * h + k];
                *m = m.max(vs.get(e, k));
            }
        }
        let mut out = Matrix::zeros(vs.rows(), h);
        let mut sum = vec![0.0; n_seg * h];
        for (e, &s) in seg.iter().enumerate() {
            for k in 0..h {
                let y = (vs.get(e, k) - max[s * h + k]).exp();
                out.set(e, k, y);
                sum[s * h + k] += y;
            }
        }
        for (e, &s) in seg.iter().enumerate() {
            for k in 0..h {
                let y = out.get(e, k) / sum[s * h + k];
                out.set(e, k, y);
            }
        }
        Ok(self.push(
            out,
            Op::EdgeSoftmax {
                scores,
                seg,
                n_seg,
            },
            &[scores],
        ))
    }

    /// Sparse aggregation `out[rows[e], block h] += coef[e, h] * x[cols[e], block h]`
    /// where `x` has `heads` equal column blocks and `coef` has one column per
    /// head. `n_out` is the number of output rows.
    pub fn spmm(
        &mut self,
        rows: Arc<Vec<usize>>,
        cols: Arc<Vec<usize>>,
        coef: Var,
        x: Var,
        heads: usize,
        n_out: usize,
    ) -> Result<Var> {
        let (vc, vx) = (self.value(coef), self.value(x));
        if rows.len() != cols.len() || vc.rows() != rows.len() || vc.cols() != heads {
            return Err(Error::dim(
                "spmm",
                format!(
                    "{} rows / {} cols / coef {:?} / heads {heads}",
                    rows.len(),
                    cols.len(),
                    vc.shape()
                ),
            ));
        }
        if heads == 0 || vx.cols() % heads != 0 {
            return Err(Error::dim(
                "spmm",
                format!("x {:?} not divisible into {heads} heads", vx.shape()),
            ));
        }
        if rows.iter().any(|&r| r >= n_out) || cols.iter().any(|&c| c >= vx.rows()) {
            return Err(Error::dim("spmm", "edge endpoint out of range"));
        }
        let f = vx.cols() / heads;
        let mut out = Matrix::zeros(n_out, vx.cols());
        for (e, (&r, &c)) in rows.iter().zip(cols.iter()).enumerate() {
            let xrow = vx.row(c);
            let crow = vc.row(e);
            let orow = out.row_mut(r);
            for h in 0..heads {
                let w = crow[h];
                if w == 0.0 {
                    continue;
                }
                let span = h * f..(h + 1) * f;
                for (o, xv) in orow[span.clone()].iter_mut().zip(&xrow[span]) {
                    *o += w * xv;
                }
            }
        }
        Ok(self.push(
            out,
            Op::SpMM {
                rows,
                cols,
                coef,
                x,
                heads,
            },
            &[coef, x],
        ))
    }

    /// Inverted dropout. With `p == 0` this is the identity and records
    /// nothing.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!("dropout probability {p}")));
        }
        if p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(a).data().len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let mut out = self.value(a).clone();
        for (o, m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        Ok(self.push(out, Op::Dropout(a, Arc::new(mask)), &[a]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|&p| self.value(p).rows()).unwrap_or(0);
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::dim("concat_cols", "row counts differ"));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map(|&p| self.value(p).cols()).unwrap_or(0);
        if parts.iter().any(|&p| self.value(p).cols() != cols) {
            return Err(Error::dim("concat_rows", "column counts differ"));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rows = data.len() / cols.max(1);
        let out = Matrix::from_vec(if cols == 0 { 0 } else { rows }, cols, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Column means as a `1 x cols` row.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.rows() == 0 {
            return Err(Error::dim("mean_rows", "empty input"));
        }
        let mut out = Matrix::zeros(1, va.cols());
        for r in 0..va.rows() {
            for (o, x) in out.row_mut(0).iter_mut().zip(va.row(r)) {
                *o += x;
            }
        }
        let n = va.rows() as f64;
        let out = out.map(|x| x / n);
        Ok(self.push(out, Op::MeanRows(a), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Matrix::scalar(s), Op::SumAll(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).data().len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn gather_rows(&mut self, a: Var, idx: Arc<Vec<usize>>) -> Result<Var> {
        let va = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= va.rows()) {
            return Err(Error::dim(
                "gather_rows",
                format!("row {bad} of {:?}", va.shape()),
            ));
        }
        let out = va.gather_rows(&idx);
        Ok(self.push(out, Op::GatherRows(a, idx), &[a]))
    }

    pub fn column(&mut self, a: Var, j: usize) -> Result<Var> {
        let va = self.value(a);
        if j >= va.cols() {
            return Err(Error::dim(
                "column",
                format!("column {j} of {:?}", va.shape()),
            ));
        }
        let data = (0..va.rows()).map(|r| va.get(r, j)).collect();
        let out = Matrix::from_vec(va.rows(), 1, data)?;
        Ok(self.push(out, Op::Column(a, j), &[a]))
    }

    /// Mean softmax cross-entropy over rows.
    pub fn cross_entropy(&mut self, logits: Var, labels: Arc<Vec<usize>>) -> Result<Var> {
        let vl = self.value(logits);
        if labels.len() != vl.rows() || vl.rows() == 0 {
            return Err(Error::dim(
                "cross_entropy",
                format!("{} labels for logits {:?}", labels.len(), vl.shape()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= vl.cols()) {
            return Err(Error::dim(
                "cross_entropy",
                format!("label {bad} with {} classes", vl.cols()),
            ));
        }
        let mut total = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            let row = vl.row(r);
            total += log_sum_exp(row) - row[y];
        }
        let out = Matrix::scalar(total / labels.len() as f64);
        Ok(self.push(out, Op::CrossEntropy(logits, labels), &[logits]))
    }

    /// Reverse sweep from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::Usage("loss handle is not on this tape".into()))?;
        if node.value.shape() != (1, 1) {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got {:?}",
                node.value.shape()
            )));
        }
        if !node.requires_grad {
            return Err(Error::Usage(
                "backward called on a value that does not depend on any gradient-tracked leaf"
                    .into(),
            ));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let out = &self.nodes[i].value;
        let mut acc = |v: Var, delta: Matrix| {
            if !self.wants(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    acc(*a, matmul_nt(g, self.value(*b)));
                }
                if self.wants(*b) {
                    acc(*b, matmul_tn(self.value(*a), g));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::AddRow(a, b) => {
                acc(*a, g.clone());
                if self.wants(*b) {
                    let mut db = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, x) in db.row_mut(0).iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    acc(*b, db);
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    acc(*a, hadamard(g, self.value(*b)));
                }
                if self.wants(*b) {
                    acc(*b, hadamard(g, self.value(*a)));
                }
            }
            Op::MulScalar(a, s) => {
                let k = self.value(*s).item();
                if self.wants(*a) {
                    acc(*a, g.map(|x| x * k));
                }
                if self.wants(*s) {
                    let d: f64 = g
                        .data()
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(x, y)| x * y)
                        .sum();
                    acc(*s, Matrix::scalar(d));
                }
            }
            Op::MulCol(a, c) => {
                let (va, vc) = (self.value(*a), self.value(*c));
                if self.wants(*a) {
                    let mut da = g.clone();
                    for r in 0..da.rows() {
                        let k = vc.get(r, 0);
                        for x in da.row_mut(r) {
                            *x *= k;
                        }
                    }
                    acc(*a, da);
                }
                if self.wants(*c) {
                    let data = (0..g.rows())
                        .map(|r| g.row(r).iter().zip(va.row(r)).map(|(x, y)| x * y).sum())
                        .collect();
                    acc(*c, Matrix::from_vec(g.rows(), 1, data).expect("column shape"));
                }
            }
            Op::Scale(a, k) => acc(*a, g.map(|x| x * k)),
            Op::AddConst(a) => acc(*a, g.clone()),
            Op::Elu(a) => {
                let va = self.value(*a);
                acc(*a, zip_map(g, va, |d, x| if x > 0.0 { d } else { d * x.exp() }));
            }
            Op::LeakyRelu(a, slope) => {
                let va = self.value(*a);
                acc(*a, zip_map(g, va, |d, x| if x > 0.0 { d } else { d * slope }));
            }
            Op::Tanh(a) => acc(*a, zip_map(g, out, |d, y| d * (1.0 - y * y))),
            Op::Sigmoid(a) => acc(*a, zip_map(g, out, |d, y| d * y * (1.0 - y))),
            Op::Log(a) => acc(*a, zip_map(g, self.value(*a), |d, x| d / x)),
            Op::Powf(a, p) => acc(
                *a,
                zip_map(g, self.value(*a), |d, x| d * p * x.powf(p - 1.0)),
            ),
            Op::SoftmaxRows(a) | Op::MaskedSoftmax(a) => {
                let mut da = Matrix::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let dy = g.row(r);
                    let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
                    for (o, (yv, dv)) in da.row_mut(r).iter_mut().zip(y.iter().zip(dy)) {
                        *o = yv * (dv - dot);
                    }
                }
                acc(*a, da);
            }
            Op::EdgeSoftmax {
                scores,
                seg,
                n_seg,
            } => {
                let h = out.cols();
                let mut dot = vec![0.0; n_seg * h];
                for (e, &s) in seg.iter().enumerate() {
                    for k in 0..h {
                        dot[s * h + k] += out.get(e, k) * g.get(e, k);
                    }
                }
                let mut ds = Matrix::zeros(out.rows(), h);
                for (e, &s) in seg.iter().enumerate() {
                    for k in 0..h {
                        ds.set(e, k, out.get(e, k) * (g.get(e, k) - dot[s * h + k]));
                    }
                }
                acc(*scores, ds);
            }
            Op::SpMM {
                rows,
                cols,
                coef,
                x,
                heads,
            } => {
                let (vc, vx) = (self.value(*coef), self.value(*x));
                let f = vx.cols() / heads;
                let want_c = self.wants(*coef);
                let want_x = self.wants(*x);
                let mut dc = Matrix::zeros(vc.rows(), vc.cols());
                let mut dx = Matrix::zeros(vx.rows(), vx.cols());
                for (e, (&r, &c)) in rows.iter().zip(cols.iter()).enumerate() {
                    let grow = g.row(r);
                    for h in 0..*heads {
                        let span = h * f..(h + 1) * f;
                        if want_c {
                            let s: f64 = grow[span.clone()]
                                .iter()
                                .zip(&vx.row(c)[span.clone()])
                                .map(|(a, b)| a * b)
                                .sum();
                            dc.set(e, h, dc.get(e, h) + s);
                        }
                        if want_x {
                            let w = vc.get(e, h);
                            if w != 0.0 {
                                for (o, gv) in dx.row_mut(c)[span.clone()]
                                    .iter_mut()
                                    .zip(&grow[span])
                                {
                                    *o += w * gv;
                                }
                            }
                        }
                    }
                }
                if want_c {
                    acc(*coef, dc);
                }
                if want_x {
                    acc(*x, dx);
                }
            }
            Op::Dropout(a, mask) => {
                let mut da = g.clone();
                for (o, m) in da.data_mut().iter_mut().zip(mask.iter()) {
                    *o *= m;
                }
                acc(*a, da);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    if self.wants(p) {
                        let mut dp = Matrix::zeros(g.rows(), pc);
                        for r in 0..g.rows() {
                            dp.row_mut(r).copy_from_slice(&g.row(r)[off..off + pc]);
                        }
                        acc(p, dp);
                    }
                    off += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (pr, pc) = self.value(p).shape();
                    if self.wants(p) {
                        let data = g.data()[off * pc..(off + pr) * pc].to_vec();
                        acc(p, Matrix::from_vec(pr, pc, data).expect("slice shape"));
                    }
                    off += pr;
                }
            }
            Op::MeanRows(a) => {
                let (n, c) = self.value(*a).shape();
                let mut da = Matrix::zeros(n, c);
                let inv = 1.0 / n as f64;
                for r in 0..n {
                    for (o, x) in da.row_mut(r).iter_mut().zip(g.row(0)) {
                        *o = x * inv;
                    }
                }
                acc(*a, da);
            }
            Op::SumAll(a) => {
                let (n, c) = self.value(*a).shape();
                acc(*a, Matrix::filled(n, c, g.item()));
            }
            Op::GatherRows(a, idx) => {
                let (n, c) = self.value(*a).shape();
                let mut da = Matrix::zeros(n, c);
                for (o, &i) in idx.iter().enumerate() {
                    for (d, x) in da.row_mut(i).iter_mut().zip(g.row(o)) {
                        *d += x;
                    }
                }
                acc(*a, da);
            }
            Op::Column(a, j) => {
                let (n, c) = self.value(*a).shape();
                let mut da = Matrix::zeros(n, c);
                for r in 0..n {
                    da.set(r, *j, g.get(r, 0));
                }
                acc(*a, da);
            }
            Op::CrossEntropy(logits, labels) => {
                let vl = self.value(*logits);
                let scale = g.item() / labels.len() as f64;
                let mut dl = vl.clone();
                for (r, &y) in labels.iter().enumerate() {
                    let row = dl.row_mut(r);
                    softmax_in_place(row);
                    row[y] -= 1.0;
                    for x in row.iter_mut() {
                        *x *= scale;
                    }
                }
                acc(*logits, dl);
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    zip_map(a, b, |x, y| x * y)
}

fn zip_map(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Matrix::from_vec(a.rows(), a.cols(), data).expect("same shape")
}
