//! Tape-based reverse-mode differentiation over rank-2 tensors.
//!
//! A [`Graph`] records every operation applied during a forward pass. Values
//! of parameter leaves are borrowed from the [`ParamStore`] rather than
//! copied. [`Graph::backward`] walks the tape in reverse and returns the
//! accumulated parameter gradients.

use std::sync::Arc;

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{matmul_into, matmul_nt_into, matmul_tn_into, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Silu,
    Gelu,
    Relu,
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "silu" => Ok(Activation::Silu),
            "gelu" => Ok(Activation::Gelu),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Invalid(format!("unknown activation `{other}`"))),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Silu => x * sigmoid(x),
            Activation::Relu => x.max(0.0),
            // tanh approximation
            Activation::Gelu => {
                let u = GELU_C * (x + 0.044715 * x * x * x);
                0.5 * x * (1.0 + u.tanh())
            }
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => {
                let u = GELU_C * (x + 0.044715 * x * x * x);
                let t = u.tanh();
                let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
            }
        }
    }
}

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulScalar(Var, Var),
    Concat(Vec<Var>),
    StackRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Arc<[usize]>),
    ScatterMean(Var, Arc<[usize]>, Vec<f64>),
    MeanRows(Var),
    SumAll(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Act(Var, Activation),
    CrossEntropy {
        logits: Var,
        probs: Vec<f64>,
        labels: Vec<usize>,
        mask: Vec<bool>,
        count: usize,
    },
    Mae(Var, Vec<f64>),
    L2NormalizeRows(Var, Vec<f64>),
    Exp(Var),
    Transpose(Var),
}

struct Node {
    value: Value,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    f32_mode: bool,
    frozen: Option<Arc<dyn Fn(ParamId) -> bool + Send + Sync + 's>>,
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            f32_mode: false,
            frozen: None,
        }
    }

    /// Rounds every forward value to single precision.
    pub fn with_f32(mut self, on: bool) -> Self {
        self.f32_mode = on;
        self
    }

    /// Parameters for which `frozen` returns true are treated as constants.
    pub fn with_frozen(mut self, frozen: impl Fn(ParamId) -> bool + Send + Sync + 's) -> Self {
        self.frozen = Some(Arc::new(frozen));
        self
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.value(*id),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, mut value: Tensor, op: Op, needs_grad: bool) -> Var {
        if self.f32_mode {
            value.round_to_f32();
        }
        debug_assert!(value.is_finite(), "non-finite value produced");
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let frozen = self.frozen.as_ref().is_some_and(|f| f(id));
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
            needs_grad: !frozen,
        });
        Var(self.nodes.len() - 1)
    }

    fn shape_err(&self, what: &str, a: Var, b: Var) -> Error {
        Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            self.value(a).shape(),
            self.value(b).shape()
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(self.shape_err("matmul", a, b));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; m * n];
        matmul_into(ta.data(), tb.data(), &mut out, m, k, n);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(self.shape_err("matmul_nt", a, b));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
        let mut out = vec![0.0; m * n];
        matmul_nt_into(ta.data(), tb.data(), &mut out, m, k, n);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMulNt(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(self.shape_err("add", a, b));
        }
        let mut out = ta.clone();
        out.add_assign(tb);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    /// Adds a `1 × c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.numel() != ta.cols() {
            return Err(self.shape_err("add_row", a, row));
        }
        let mut out = ta.clone();
        let c = ta.cols();
        for chunk in out.data_mut().chunks_mut(c) {
            for (o, b) in chunk.iter_mut().zip(tr.data()) {
                *o += b;
            }
        }
        let ng = self.needs(a) || self.needs(row);
        Ok(self.push(out, Op::AddRow(a, row), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(self.shape_err("mul", a, b));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v * s);
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    /// Multiplies `a` by the `1 × 1` value `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(self.shape_err("mul_scalar", a, s));
        }
        let sv = self.value(s).item();
        let out = self.value(a).map(|v| v * sv);
        let ng = self.needs(a) || self.needs(s);
        Ok(self.push(out, Op::MulScalar(a, s), ng))
    }

    /// Concatenates along the last dimension.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            let shapes: Vec<_> = parts.iter().map(|&p| self.value(p).shape().to_vec()).collect();
            return Err(Error::Shape(format!("concat rows differ: {shapes:?}")));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::matrix(rows, cols, out)?, Op::Concat(parts.to_vec()), ng))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        if parts.iter().any(|&p| self.value(p).cols() != cols) {
            let shapes: Vec<_> = parts.iter().map(|&p| self.value(p).shape().to_vec()).collect();
            return Err(Error::Shape(format!("stack_rows columns differ: {shapes:?}")));
        }
        let rows: usize = parts.iter().map(|&p| self.value(p).rows()).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::matrix(rows, cols, out)?, Op::StackRows(parts.to_vec()), ng))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        if start + len > ta.cols() {
            return Err(Error::Shape(format!(
                "slice_cols {start}..{} of {:?}",
                start + len,
                ta.shape()
            )));
        }
        let rows = ta.rows();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&ta.row(r)[start..start + len]);
        }
        let ng = self.needs(a);
        Ok(self.push(Tensor::matrix(rows, len, out)?, Op::SliceCols(a, start), ng))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= ta.rows()) {
            return Err(Error::Shape(format!(
                "gather_rows index {bad} out of range for {:?}",
                ta.shape()
            )));
        }
        let c = ta.cols();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(ta.row(i));
        }
        let ng = self.needs(a);
        Ok(self.push(
            Tensor::matrix(idx.len(), c, out)?,
            Op::GatherRows(a, idx.into()),
            ng,
        ))
    }

    /// Row `i` of the output is the mean of the rows `e` of `a` with
    /// `dst[e] == i`; rows without contributors are zero.
    pub fn scatter_mean(&mut self, a: Var, dst: &[usize], n_out: usize) -> Result<Var> {
        let ta = self.value(a);
        if dst.len() != ta.rows() || dst.iter().any(|&d| d >= n_out) {
            return Err(Error::Shape(format!(
                "scatter_mean: {} targets for {:?} into {n_out} rows",
                dst.len(),
                ta.shape()
            )));
        }
        let c = ta.cols();
        let mut counts = vec![0.0; n_out];
        for &d in dst {
            counts[d] += 1.0;
        }
        let mut out = vec![0.0; n_out * c];
        for (e, &d) in dst.iter().enumerate() {
            for (o, v) in out[d * c..(d + 1) * c].iter_mut().zip(ta.row(e)) {
                *o += v;
            }
        }
        for (d, &cnt) in counts.iter().enumerate() {
            if cnt > 0.0 {
                for o in &mut out[d * c..(d + 1) * c] {
                    *o /= cnt;
                }
            }
        }
        let ng = self.needs(a);
        Ok(self.push(
            Tensor::matrix(n_out, c, out)?,
            Op::ScatterMean(a, dst.into(), counts),
            ng,
        ))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let (r, c) = (ta.rows(), ta.cols());
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, v) in out.iter_mut().zip(ta.row(i)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        let ng = self.needs(a);
        self.push(Tensor::matrix(1, c, out).expect("shape"), Op::MeanRows(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.needs(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), ng)
    }

    /// Row-wise softmax with max subtraction. Columns where `allowed` is
    /// false get weight exactly zero.
    pub fn softmax_rows(&mut self, a: Var, allowed: Option<&[bool]>) -> Result<Var> {
        let ta = self.value(a);
        let c = ta.cols();
        if let Some(m) = allowed {
            if m.len() != c || !m.iter().any(|&b| b) {
                return Err(Error::Shape(format!(
                    "softmax mask of len {} for {:?} (needs ≥1 allowed)",
                    m.len(),
                    ta.shape()
                )));
            }
        }
        let out = softmax_rows_masked(ta, allowed);
        let ng = self.needs(a);
        Ok(self.push(out, Op::Softmax(a), ng))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let tx = self.value(x);
        let c = tx.cols();
        if c < 2 || self.value(gain).numel() != c || self.value(bias).numel() != c {
            return Err(self.shape_err("layer_norm", x, gain));
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let r = tx.rows();
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = tx.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            Tensor::matrix(r, c, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let out = self.value(x).map(|v| kind.apply(v));
        let ng = self.needs(x);
        self.push(out, Op::Act(x, kind), ng)
    }

    /// Mean over masked rows of `−log softmax(logits)[label]`.
    pub fn cross_entropy_masked(
        &mut self,
        logits: Var,
        labels: &[usize],
        mask: &[bool],
    ) -> Result<Var> {
        let tl = self.value(logits);
        let (r, c) = (tl.rows(), tl.cols());
        if labels.len() != r || mask.len() != r {
            return Err(Error::Shape(format!(
                "cross_entropy: logits {:?}, {} labels, {} mask",
                tl.shape(),
                labels.len(),
                mask.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Invalid(format!("label {bad} ≥ {c} classes")));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::Invalid("cross_entropy_masked: empty mask".into()));
        }
        let probs = softmax_rows_masked(tl, None);
        let mut loss = 0.0;
        for i in (0..r).filter(|&i| mask[i]) {
            let row = tl.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - row[labels[i]];
        }
        loss /= count as f64;
        let ng = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                probs: probs.into_data(),
                labels: labels.to_vec(),
                mask: mask.to_vec(),
                count,
            },
            ng,
        ))
    }

    /// Mean absolute error between every element of `pred` and `target`.
    pub fn mae(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let tp = self.value(pred);
        if tp.numel() != target.len() || target.is_empty() {
            return Err(Error::Shape(format!(
                "mae: prediction {:?} vs {} targets",
                tp.shape(),
                target.len()
            )));
        }
        let s: f64 = tp.data().iter().zip(target).map(|(p, t)| (p - t).abs()).sum();
        let ng = self.needs(pred);
        Ok(self.push(
            Tensor::scalar(s / target.len() as f64),
            Op::Mae(pred, target.to_vec()),
            ng,
        ))
    }

    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let c = ta.cols();
        let mut norms = Vec::with_capacity(ta.rows());
        let mut out = ta.clone();
        for row in out.data_mut().chunks_mut(c) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            row.iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        let ng = self.needs(a);
        self.push(out, Op::L2NormalizeRows(a, norms), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        let ng = self.needs(a);
        self.push(out, Op::Exp(a), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let ng = self.needs(a);
        self.push(out, Op::Transpose(a), ng)
    }

    /// Reverse-mode pass from a `1 × 1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let n = self.nodes.len();
        if self.value(loss).numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));
        let mut out = Gradients::new(self.store.len());

        for idx in (0..=loss.0).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.backprop_node(node, idx, &gy, &mut grads, &mut out)?;
        }
        Ok(out)
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(t) => t.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Grad buffer for `v`, created zeroed when absent.
    fn slot<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> &'g mut Tensor {
        let shape = self.value(v).shape().to_vec();
        grads[v.0].get_or_insert_with(|| Tensor::zeros(&shape))
    }

    fn backprop_node(
        &self,
        node: &Node,
        idx: usize,
        gy: &Tensor,
        grads: &mut [Option<Tensor>],
        out: &mut Gradients,
    ) -> Result<()> {
        let y = self.value(Var(idx));
        match &node.op {
            Op::Input => {}
            Op::Param(id) => out.add(*id, gy),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.needs(*a) {
                    let ga = self.slot(grads, *a);
                    matmul_nt_into(gy.data(), tb.data(), ga.data_mut(), m, n, k);
                }
                if self.needs(*b) {
                    let gb = self.slot(grads, *b);
                    matmul_tn_into(ta.data(), gy.data(), gb.data_mut(), m, k, n);
                }
            }
            Op::MatMulNt(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                if self.needs(*a) {
                    let ga = self.slot(grads, *a);
                    matmul_into(gy.data(), tb.data(), ga.data_mut(), m, n, k);
                }
                if self.needs(*b) {
                    let gb = self.slot(grads, *b);
                    matmul_tn_into(gy.data(), ta.data(), gb.data_mut(), m, n, k);
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, gy.clone());
                self.acc(grads, *b, gy.clone());
            }
            Op::AddRow(a, row) => {
                self.acc(grads, *a, gy.clone());
                if self.needs(*row) {
                    let c = gy.cols();
                    let g = self.slot(grads, *row);
                    for r in 0..gy.rows() {
                        for (o, v) in g.data_mut().iter_mut().zip(&gy.data()[r * c..(r + 1) * c]) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let tb = self.value(*b);
                    let g = gy.data().iter().zip(tb.data()).map(|(g, v)| g * v).collect();
                    self.acc(grads, *a, Tensor::new(gy.shape().to_vec(), g)?);
                }
                if self.needs(*b) {
                    let ta = self.value(*a);
                    let g = gy.data().iter().zip(ta.data()).map(|(g, v)| g * v).collect();
                    self.acc(grads, *b, Tensor::new(gy.shape().to_vec(), g)?);
                }
            }
            Op::Scale(a, s) => self.acc(grads, *a, gy.map(|g| g * s)),
            Op::MulScalar(a, s) => {
                let sv = self.value(*s).item();
                self.acc(grads, *a, gy.map(|g| g * sv));
                if self.needs(*s) {
                    let ta = self.value(*a);
                    let d: f64 = gy.data().iter().zip(ta.data()).map(|(g, v)| g * v).sum();
                    self.acc(grads, *s, Tensor::filled(self.value(*s).shape(), d));
                }
            }
            Op::Concat(parts) => {
                let rows = gy.rows();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    if self.needs(p) {
                        let g = self.slot(grads, p);
                        for r in 0..rows {
                            for (o, v) in g.row_mut(r).iter_mut().zip(&gy.row(r)[offset..offset + c]) {
                                *o += v;
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::StackRows(parts) => {
                let c = gy.cols();
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    let r = n / c.max(1);
                    self.acc(grads, p, Tensor::matrix(r, c, gy.data()[offset..offset + n].to_vec())?);
                    offset += n;
                }
            }
            Op::SliceCols(a, start) => {
                let len = gy.cols();
                let g = self.slot(grads, *a);
                for r in 0..gy.rows() {
                    for (o, v) in g.row_mut(r)[*start..*start + len].iter_mut().zip(gy.row(r)) {
                        *o += v;
                    }
                }
            }
            Op::GatherRows(a, ix) => {
                if let Op::Param(id) = self.nodes[a.0].op {
                    // embedding tables: scatter straight into the parameter gradient
                    let shape = self.value(*a).shape().to_vec();
                    let g = out.slot_mut(id, &shape);
                    for (r, &i) in ix.iter().enumerate() {
                        for (o, v) in g.row_mut(i).iter_mut().zip(gy.row(r)) {
                            *o += v;
                        }
                    }
                } else {
                    let g = self.slot(grads, *a);
                    for (r, &i) in ix.iter().enumerate() {
                        for (o, v) in g.row_mut(i).iter_mut().zip(gy.row(r)) {
                            *o += v;
                        }
                    }
                }
            }
            Op::ScatterMean(a, dst, counts) => {
                let g = self.slot(grads, *a);
                for (e, &d) in dst.iter().enumerate() {
                    let inv = 1.0 / counts[d];
                    for (o, v) in g.row_mut(e).iter_mut().zip(gy.row(d)) {
                        *o += v * inv;
                    }
                }
            }
            Op::MeanRows(a) => {
                let r = self.value(*a).rows();
                let g = self.slot(grads, *a);
                let inv = 1.0 / r as f64;
                for i in 0..r {
                    for (o, v) in g.row_mut(i).iter_mut().zip(gy.data()) {
                        *o += v * inv;
                    }
                }
            }
            Op::SumAll(a) => {
                let gv = gy.item();
                let g = self.slot(grads, *a);
                g.data_mut().iter_mut().for_each(|o| *o += gv);
            }
            Op::Softmax(a) => {
                let c = y.cols();
                let g = self.slot(grads, *a);
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = &gy.data()[r * c..(r + 1) * c];
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for ((o, p), q) in g.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o += p * (q - dot);
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
                let c = y.cols();
                let rows = y.rows();
                let gain_v = self.value(*gain).data().to_vec();
                if self.needs(*gain) || self.needs(*bias) {
                    let mut gg = vec![0.0; c];
                    let mut gb = vec![0.0; c];
                    for r in 0..rows {
                        for j in 0..c {
                            let gv = gy.data()[r * c + j];
                            gg[j] += gv * xhat[r * c + j];
                            gb[j] += gv;
                        }
                    }
                    let gshape = self.value(*gain).shape().to_vec();
                    self.acc(grads, *gain, Tensor::new(gshape.clone(), gg)?);
                    self.acc(grads, *bias, Tensor::new(gshape, gb)?);
                }
                if self.needs(*x) {
                    let g = self.slot(grads, *x);
                    let mut gh = vec![0.0; c];
                    for r in 0..rows {
                        let mut mean_gh = 0.0;
                        let mut mean_ghx = 0.0;
                        for j in 0..c {
                            gh[j] = gy.data()[r * c + j] * gain_v[j];
                            mean_gh += gh[j];
                            mean_ghx += gh[j] * xhat[r * c + j];
                        }
                        mean_gh /= c as f64;
                        mean_ghx /= c as f64;
                        let row = g.row_mut(r);
                        for j in 0..c {
                            row[j] += inv_std[r] * (gh[j] - mean_gh - xhat[r * c + j] * mean_ghx);
                        }
                    }
                }
            }
            Op::Act(x, kind) => {
                let tx = self.value(*x);
                let g = gy
                    .data()
                    .iter()
                    .zip(tx.data())
                    .map(|(g, v)| g * kind.derivative(*v))
                    .collect();
                self.acc(grads, *x, Tensor::new(gy.shape().to_vec(), g)?);
            }
            Op::CrossEntropy {
                logits,
                probs,
                labels,
                mask,
                count,
            } => {
                let gv = gy.item() / *count as f64;
                let c = self.value(*logits).cols();
                let g = self.slot(grads, *logits);
                for (r, &m) in mask.iter().enumerate() {
                    if !m {
                        continue;
                    }
                    let row = g.row_mut(r);
                    for j in 0..c {
                        let onehot = if j == labels[r] { 1.0 } else { 0.0 };
                        row[j] += gv * (probs[r * c + j] - onehot);
                    }
                }
            }
            Op::Mae(pred, target) => {
                let gv = gy.item() / target.len() as f64;
                let tp = self.value(*pred);
                let g = tp
                    .data()
                    .iter()
                    .zip(target)
                    .map(|(p, t)| {
                        let d = p - t;
                        if d > 0.0 {
                            gv
                        } else if d < 0.0 {
                            -gv
                        } else {
                            0.0
                        }
                    })
                    .collect();
                self.acc(grads, *pred, Tensor::new(tp.shape().to_vec(), g)?);
            }
            Op::L2NormalizeRows(a, norms) => {
                let c = y.cols();
                let g = self.slot(grads, *a);
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = &gy.data()[r * c..(r + 1) * c];
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for ((o, p), q) in g.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o += (q - p * dot) / norms[r];
                    }
                }
            }
            Op::Exp(a) => {
                let g = gy.data().iter().zip(y.data()).map(|(g, v)| g * v).collect();
                self.acc(grads, *a, Tensor::new(gy.shape().to_vec(), g)?);
            }
            Op::Transpose(a) => self.acc(grads, *a, gy.transpose()),
        }
        Ok(())
    }
}

/// Standalone row softmax; `allowed` excludes columns (weight exactly 0).
pub fn softmax_rows_masked(t: &Tensor, allowed: Option<&[bool]>) -> Tensor {
    let c = t.cols();
    let mut out = t.clone();
    for row in out.data_mut().chunks_mut(c) {
        let ok = |j: usize| allowed.is_none_or(|m| m[j]);
        let max = (0..c)
            .filter(|&j| ok(j))
            .map(|j| row[j])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for (j, v) in row.iter_mut().enumerate() {
            if ok(j) {
                *v = (*v - max).exp();
                s += *v;
            } else {
                *v = 0.0;
            }
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    out
}

pub fn softmax_rows(t: &Tensor) -> Tensor {
    softmax_rows_masked(t, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Init;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_closed_forms() {
        let u = softmax_rows(&Tensor::matrix(1, 4, vec![0.3; 4]).unwrap());
        assert!(u.data().iter().all(|&v| close(v, 0.25, 1e-15)));

        let t = softmax_rows(&Tensor::matrix(1, 2, vec![0.0, 2f64.ln()]).unwrap());
        assert!(close(t.get(0, 0), 1.0 / 3.0, 1e-15));
        assert!(close(t.get(0, 1), 2.0 / 3.0, 1e-15));

        let base = Tensor::matrix(1, 3, vec![0.1, -0.7, 1.3]).unwrap();
        let shifted = base.map(|v| v + 1000.0);
        assert!(softmax_rows(&base).max_abs_diff(&softmax_rows(&shifted)) < 1e-12);
    }

    #[test]
    fn masked_softmax_zeroes_excluded() {
        let t = Tensor::matrix(1, 3, vec![5.0, 1.0, 1.0]).unwrap();
        let s = softmax_rows_masked(&t, Some(&[false, true, true]));
        assert_eq!(s.get(0, 0), 0.0);
        assert!(close(s.get(0, 1), 0.5, 1e-15));
    }

    #[test]
    fn silu_values() {
        let s = Activation::Silu;
        assert_eq!(s.apply(0.0), 0.0);
        assert!(close(s.apply(20.0), 20.0, 1e-6));
        assert!(close(s.apply(1.0), 1.0 / (1.0 + (-1f64).exp()), 1e-15));
        assert!(close(s.apply(1.0), 0.731059, 1e-6));
        assert!("tanh".parse::<Activation>().is_err());
    }

    #[test]
    fn activation_derivatives_match_differences() {
        for kind in [Activation::Silu, Activation::Gelu] {
            for &x in &[-3.0, -0.5, 0.1, 2.2] {
                let h = 1e-6;
                let num = (kind.apply(x + h) - kind.apply(x - h)) / (2.0 * h);
                assert!(close(num, kind.derivative(x), 1e-8), "{kind:?} at {x}");
            }
        }
    }

    #[test]
    fn layer_norm_closed_form() {
        let mut store = ParamStore::new(0);
        let gain = store.add("g", &[1, 2], Init::Ones).unwrap();
        let bias = store.add("b", &[1, 2], Init::Zeros).unwrap();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::matrix(1, 2, vec![1.0, 3.0]).unwrap());
        let (gv, bv) = (g.param(gain), g.param(bias));
        let y = g.layer_norm(x, gv, bv, 1e-5).unwrap();
        // mean 2, var 1
        let k = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!(close(g.value(y).get(0, 0), -k, 1e-15));
        assert!(close(g.value(y).get(0, 1), k, 1e-15));

        let c = g.input(Tensor::matrix(1, 2, vec![4.0, 4.0]).unwrap());
        let z = g.layer_norm(c, gv, bv, 1e-5).unwrap();
        assert_eq!(g.value(z).data(), &[0.0, 0.0]);
    }

    #[test]
    fn cross_entropy_closed_forms() {
        let store = ParamStore::new(0);
        let mut g = Graph::new(&store);
        let uniform = g.input(Tensor::zeros(&[2, 5]));
        let l = g.cross_entropy_masked(uniform, &[1, 3], &[true, true]).unwrap();
        assert!(close(g.value(l).item(), 5f64.ln(), 1e-14));

        let mut onehot = Tensor::zeros(&[1, 4]);
        onehot.set(0, 2, 20.0);
        let o = g.input(onehot);
        let l = g.cross_entropy_masked(o, &[2], &[true]).unwrap();
        assert!(g.value(l).item() < 1e-8);

        let e = g.input(Tensor::zeros(&[1, 4]));
        assert!(g.cross_entropy_masked(e, &[0], &[false]).is_err());
    }

    #[test]
    fn backward_simple_losses() {
        let mut store = ParamStore::new(1);
        let p = store.add("p", &[2, 3], Init::FanIn).unwrap();
        let g = {
            let mut g = Graph::new(&store);
            let v = g.param(p);
            let s = g.sum(v);
            g.backward(s).unwrap()
        };
        assert!(g.get(p).unwrap().data().iter().all(|&v| v == 1.0));

        let grads = {
            let mut g = Graph::new(&store);
            let v = g.param(p);
            let sq = g.mul(v, v).unwrap();
            let s = g.sum(sq);
            let half = g.scale(s, 0.5);
            g.backward(half).unwrap()
        };
        assert!(grads.get(p).unwrap().max_abs_diff(store.value(p)) < 1e-15);

        store.accumulate(&grads);
        store.accumulate(&grads);
        let twice = store.get(p).grad.clone();
        assert!(twice.max_abs_diff(&store.value(p).map(|v| 2.0 * v)) < 1e-15);
        store.zero_grads();
        assert!(store.get(p).grad.data().iter().all(|&v| v == 0.0));

        let mut g = Graph::new(&store);
        let v = g.param(p);
        assert!(g.backward(v).is_err());
    }

    #[test]
    fn unmasked_rows_get_zero_gradient() {
        let mut store = ParamStore::new(2);
        let w = store.add("w", &[3, 4], Init::FanIn).unwrap();
        let mut g = Graph::new(&store);
        let x = g.param(w);
        let l = g.cross_entropy_masked(x, &[0, 1, 2], &[true, false, true]).unwrap();
        let grads = g.backward(l).unwrap();
        let gw = grads.get(w).unwrap();
        assert!(gw.row(1).iter().all(|&v| v == 0.0));
        assert!(gw.row(0).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn mae_values() {
        let store = ParamStore::new(0);
        let mut g = Graph::new(&store);
        let p = g.input(Tensor::matrix(2, 1, vec![0.0, 2.0]).unwrap());
        let l = g.mae(p, &[1.0, 1.0]).unwrap();
        assert_eq!(g.value(l).item(), 1.0);
        let l = g.mae(p, &[0.0, 2.0]).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        assert!(g.mae(p, &[]).is_err());
    }
}
