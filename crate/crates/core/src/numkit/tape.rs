//! Eager reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation on a [`Var`] evaluates immediately and appends a node to
//! its [`Tape`]. Nodes only reference earlier nodes, so the tape order is a
//! topological order and the backward pass is a single reverse sweep.

use std::cell::{Ref, RefCell};

use super::tensor::{matmul_nt_into, matmul_tn_into};
use super::{NumError, ParamId, ParamStore, Tensor};

/// Norm below which a vector is considered degenerate for normalization.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(usize, usize),
    AddBias(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Sigmoid(usize),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    LogClamped { x: usize, lo: f64, hi: f64 },
    Transpose(usize),
    Sum(usize),
    Mean(usize),
    NormalizeRows(usize),
    Gather { x: usize, cols: Vec<usize> },
    SelectRows { x: usize, rows: Vec<usize> },
    Interleave(Vec<usize>),
    MeanPool { x: usize, tokens: usize },
    Attention(Box<AttentionNode>),
}

#[derive(Debug)]
struct AttentionNode {
    q: usize,
    k: usize,
    v: usize,
    tokens: usize,
    heads: usize,
    /// Softmax weights, laid out `[group][head][query][key]`.
    probs: Vec<f64>,
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records operations as they execute.
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
        write!(f, "Var#{} {:?}", self.id, self.value())
    }
}

/// Gradients of a scalar with respect to every node of a tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `var`, or `None` if the loss does not depend
    /// on it.
    pub fn wrt(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
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

    fn push(&self, value: Tensor, op: Op, name: &'static str) -> Result<Var<'_>, NumError> {
        if !value.is_finite() {
            return Err(NumError::NonFinite { op: name });
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    /// A constant input that receives gradients but no parameter updates.
    pub fn leaf(&self, value: Tensor) -> Result<Var<'_>, NumError> {
        self.push(value, Op::Leaf, "leaf")
    }

    /// Binds a parameter's current value into the graph.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: store.value(id).clone(),
            op: Op::Param(id),
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn gradients(&self, loss: Var<'_>) -> Result<Gradients, NumError> {
        let nodes = self.nodes.borrow();
        let loss_value = &nodes[loss.id].value;
        if loss_value.len() != 1 {
            return Err(NumError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::filled(loss_value.shape(), 1.0));

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            backprop_node(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Accumulates `∂loss/∂p` into the gradient of every parameter bound on
    /// this tape.
    pub fn backward(&self, loss: Var<'_>, store: &mut ParamStore) -> Result<(), NumError> {
        let grads = self.gradients(loss)?;
        let nodes = self.nodes.borrow();
        for (node, g) in nodes.iter().zip(&grads.grads) {
            if let (Op::Param(pid), Some(g)) = (&node.op, g) {
                store.get_mut(*pid).grad.add_assign(g);
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn backprop_node(nodes: &[Node], id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let val = |i: usize| &nodes[i].value;
    let out = &nodes[id].value;
    match &nodes[id].op {
        Op::Leaf | Op::Param(_) => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (r, k, c) = (av.rows(), av.cols(), bv.cols());
            let mut da = vec![0.0; r * k];
            matmul_nt_into(g.data(), bv.data(), &mut da, r, c, k);
            let mut db = vec![0.0; k * c];
            matmul_tn_into(av.data(), g.data(), &mut db, r, k, c);
            accumulate(grads, *a, Tensor::new(av.shape().to_vec(), da).unwrap());
            accumulate(grads, *b, Tensor::new(bv.shape().to_vec(), db).unwrap());
        }
        Op::AddBias(x, b) => {
            let c = g.cols();
            let mut db = vec![0.0; c];
            for i in 0..g.rows() {
                for (d, v) in db.iter_mut().zip(g.row(i)) {
                    *d += v;
                }
            }
            accumulate(grads, *x, g.clone());
            accumulate(grads, *b, Tensor::new(val(*b).shape().to_vec(), db).unwrap());
        }
        Op::Add(a, b) => {
            accumulate(grads, *a, g.clone());
            accumulate(grads, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(grads, *a, g.clone());
            accumulate(grads, *b, g.map(|v| -v));
        }
        Op::Mul(a, b) => {
            accumulate(grads, *a, g.zip_map(val(*b), |gv, bv| gv * bv));
            accumulate(grads, *b, g.zip_map(val(*a), |gv, av| gv * av));
        }
        Op::Scale(x, f) => accumulate(grads, *x, g.map(|v| v * f)),
        Op::Relu(x) => {
            accumulate(
                grads,
                *x,
                g.zip_map(val(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 }),
            );
        }
        Op::Sigmoid(x) => accumulate(grads, *x, g.zip_map(out, |gv, s| gv * s * (1.0 - s))),
        Op::SoftmaxRows(x) => {
            let mut dx = out.clone();
            for i in 0..out.rows() {
                let (p, gr) = (out.row(i), g.row(i));
                let inner: f64 = p.iter().zip(gr).map(|(a, b)| a * b).sum();
                let c = out.cols();
                for j in 0..c {
                    dx.data_mut()[i * c + j] = p[j] * (gr[j] - inner);
                }
            }
            accumulate(grads, *x, dx);
        }
        Op::LogSoftmaxRows(x) => {
            let mut dx = out.clone();
            let c = out.cols();
            for i in 0..out.rows() {
                let gr = g.row(i);
                let total: f64 = gr.iter().sum();
                for j in 0..c {
                    let p = out.data()[i * c + j].exp();
                    dx.data_mut()[i * c + j] = gr[j] - p * total;
                }
            }
            accumulate(grads, *x, dx);
        }
        Op::LogClamped { x, lo, hi } => {
            let (lo, hi) = (*lo, *hi);
            accumulate(
                grads,
                *x,
                g.zip_map(val(*x), |gv, xv| {
                    if xv > lo && xv < hi {
                        gv / xv
                    } else {
                        0.0
                    }
                }),
            );
        }
        Op::Transpose(x) => accumulate(grads, *x, g.transpose()),
        Op::Sum(x) => accumulate(grads, *x, Tensor::filled(val(*x).shape(), g.item())),
        Op::Mean(x) => {
            let xv = val(*x);
            accumulate(
                grads,
                *x,
                Tensor::filled(xv.shape(), g.item() / xv.len() as f64),
            );
        }
        Op::NormalizeRows(x) => {
            let xv = val(*x);
            let c = xv.cols();
            let mut dx = vec![0.0; xv.len()];
            for i in 0..xv.rows() {
                let row = xv.row(i);
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                let y = out.row(i);
                let gr = g.row(i);
                let inner: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                for j in 0..c {
                    dx[i * c + j] = (gr[j] - y[j] * inner) / norm;
                }
            }
            accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), dx).unwrap());
        }
        Op::Gather { x, cols } => {
            let xv = val(*x);
            let mut dx = Tensor::zeros(xv.shape());
            let c = xv.cols();
            for (i, &j) in cols.iter().enumerate() {
                dx.data_mut()[i * c + j] += g.data()[i];
            }
            accumulate(grads, *x, dx);
        }
        Op::SelectRows { x, rows } => {
            let xv = val(*x);
            let mut dx = Tensor::zeros(xv.shape());
            let c = xv.cols();
            for (k, &r) in rows.iter().enumerate() {
                for j in 0..c {
                    dx.data_mut()[r * c + j] += g.data()[k * c + j];
                }
            }
            accumulate(grads, *x, dx);
        }
        Op::Interleave(parts) => {
            let t = parts.len();
            let c = g.cols();
            for (slot, &p) in parts.iter().enumerate() {
                let pv = val(p);
                let mut dp = vec![0.0; pv.len()];
                for s in 0..pv.rows() {
                    dp[s * c..(s + 1) * c].copy_from_slice(g.row(s * t + slot));
                }
                accumulate(grads, p, Tensor::new(pv.shape().to_vec(), dp).unwrap());
            }
        }
        Op::MeanPool { x, tokens } => {
            let xv = val(*x);
            let c = xv.cols();
            let mut dx = vec![0.0; xv.len()];
            let scale = 1.0 / *tokens as f64;
            for r in 0..xv.rows() {
                let group = r / tokens;
                for j in 0..c {
                    dx[r * c + j] = g.data()[group * c + j] * scale;
                }
            }
            accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), dx).unwrap());
        }
        Op::Attention(node) => {
            let (dq, dk, dv) = attention_backward(
                val(node.q),
                val(node.k),
                val(node.v),
                &node.probs,
                g,
                node.tokens,
                node.heads,
            );
            accumulate(grads, node.q, dq);
            accumulate(grads, node.k, dk);
            accumulate(grads, node.v, dv);
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(self) -> usize {
        self.id
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Scalar value of a one-element node.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn same_tape(self, other: Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars from different tapes"
        );
    }

    fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> NumError {
        NumError::Shape {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        }
    }

    /// Matrix product, gradient `dA = dC·Bᵀ`, `dB = Aᵀ·dC`.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>, NumError> {
        self.same_tape(other);
        let value = self.value().matmul(&other.value())?;
        self.tape
            .push(value, Op::MatMul(self.id, other.id), "matmul")
    }

    /// Adds a `[c]` bias to every row of a `[n×c]` matrix.
    pub fn add_bias(self, bias: Var<'t>) -> Result<Var<'t>, NumError> {
        self.same_tape(bias);
        let value = {
            let (x, b) = (self.value(), bias.value());
            if b.shape().len() != 1 || b.len() != x.cols() || !x.is_matrix() {
                return Err(Self::shape_err("add_bias", &x, &b));
            }
            let mut out = x.clone();
            let c = x.cols();
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                *v += b.data()[i % c];
            }
            out
        };
        self.tape
            .push(value, Op::AddBias(self.id, bias.id), "add_bias")
    }

    /// `x·w + b` with `b` broadcast over rows.
    pub fn affine(self, w: Var<'t>, b: Var<'t>) -> Result<Var<'t>, NumError> {
        self.matmul(w)?.add_bias(b)
    }

    fn binary(
        self,
        other: Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: fn(usize, usize) -> Op,
    ) -> Result<Var<'t>, NumError> {
        self.same_tape(other);
        let value = {
            let (a, b) = (self.value(), other.value());
            if a.shape() != b.shape() {
                return Err(Self::shape_err(name, &a, &b));
            }
            a.zip_map(&b, f)
        };
        self.tape.push(value, op(self.id, other.id), name)
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>, NumError> {
        self.binary(other, "add", |a, b| a + b, Op::Add)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>, NumError> {
        self.binary(other, "sub", |a, b| a - b, Op::Sub)
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>, NumError> {
        self.binary(other, "mul", |a, b| a * b, Op::Mul)
    }

    pub fn scale(self, factor: f64) -> Result<Var<'t>, NumError> {
        let value = self.value().map(|v| v * factor);
        self.tape.push(value, Op::Scale(self.id, factor), "scale")
    }

    /// `max(0, x)`; the subgradient at exactly zero is zero.
    pub fn relu(self) -> Result<Var<'t>, NumError> {
        let value = self.value().map(|v| v.max(0.0));
        self.tape.push(value, Op::Relu(self.id), "relu")
    }

    pub fn sigmoid(self) -> Result<Var<'t>, NumError> {
        let value = self.value().map(logistic);
        self.tape.push(value, Op::Sigmoid(self.id), "sigmoid")
    }

    pub fn softmax_rows(self) -> Result<Var<'t>, NumError> {
        let value = softmax_rows(&self.value());
        self.tape
            .push(value, Op::SoftmaxRows(self.id), "softmax_rows")
    }

    pub fn log_softmax_rows(self) -> Result<Var<'t>, NumError> {
        let value = {
            let x = self.value();
            let mut out = x.clone();
            let c = x.cols();
            for i in 0..x.rows() {
                let row = x.row(i);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                for j in 0..c {
                    out.data_mut()[i * c + j] = row[j] - lse;
                }
            }
            out
        };
        self.tape
            .push(value, Op::LogSoftmaxRows(self.id), "log_softmax_rows")
    }

    /// `ln(clamp(x, lo, hi))`; no gradient flows where the clamp is active.
    pub fn log_clamped(self, lo: f64, hi: f64) -> Result<Var<'t>, NumError> {
        let value = self.value().map(|v| v.clamp(lo, hi).ln());
        self.tape
            .push(value, Op::LogClamped { x: self.id, lo, hi }, "log_clamped")
    }

    pub fn transpose(self) -> Result<Var<'t>, NumError> {
        let value = self.value().transpose();
        self.tape.push(value, Op::Transpose(self.id), "transpose")
    }

    pub fn sum(self) -> Result<Var<'t>, NumError> {
        let value = Tensor::scalar(self.value().sum());
        self.tape.push(value, Op::Sum(self.id), "sum")
    }

    pub fn mean(self) -> Result<Var<'t>, NumError> {
        let value = {
            let x = self.value();
            Tensor::scalar(x.sum() / x.len() as f64)
        };
        self.tape.push(value, Op::Mean(self.id), "mean")
    }

    /// Scales every row to unit Euclidean norm. A vector is treated as one row.
    pub fn normalize_rows(self) -> Result<Var<'t>, NumError> {
        let value = {
            let x = self.value();
            let mut out = x.clone();
            let c = x.cols();
            for i in 0..x.rows() {
                let norm = x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm < DEGENERATE_NORM {
                    return Err(NumError::Degenerate { norm });
                }
                for v in &mut out.data_mut()[i * c..(i + 1) * c] {
                    *v /= norm;
                }
            }
            out
        };
        self.tape
            .push(value, Op::NormalizeRows(self.id), "normalize_rows")
    }

    /// Picks `x[i, cols[i]]` from each row, giving a `[rows]` vector.
    pub fn gather(self, cols: &[usize]) -> Result<Var<'t>, NumError> {
        let value = {
            let x = self.value();
            if cols.len() != x.rows() || cols.iter().any(|&j| j >= x.cols()) {
                return Err(NumError::Contract(format!(
                    "gather indices {cols:?} invalid for shape {:?}",
                    x.shape()
                )));
            }
            let data = cols.iter().enumerate().map(|(i, &j)| x.get(i, j)).collect();
            Tensor::vector(data)?
        };
        self.tape.push(
            value,
            Op::Gather {
                x: self.id,
                cols: cols.to_vec(),
            },
            "gather",
        )
    }

    /// Rows of a matrix at the given indices, in order.
    pub fn select_rows(self, rows: &[usize]) -> Result<Var<'t>, NumError> {
        let value = {
            let x = self.value();
            if rows.is_empty() || rows.iter().any(|&r| r >= x.rows()) || !x.is_matrix() {
                return Err(NumError::Contract(format!(
                    "row selection {rows:?} invalid for shape {:?}",
                    x.shape()
                )));
            }
            let mut data = Vec::with_capacity(rows.len() * x.cols());
            for &r in rows {
                data.extend_from_slice(x.row(r));
            }
            Tensor::matrix(rows.len(), x.cols(), data)?
        };
        self.tape.push(
            value,
            Op::SelectRows {
                x: self.id,
                rows: rows.to_vec(),
            },
            "select_rows",
        )
    }

    /// Mean over consecutive blocks of `tokens` rows: `[n·T×d] → [n×d]`.
    pub fn mean_pool(self, tokens: usize) -> Result<Var<'t>, NumError> {
        let value = {
            let x = self.value();
            if tokens == 0 || x.rows() % tokens != 0 || !x.is_matrix() {
                return Err(NumError::Contract(format!(
                    "cannot pool {:?} in blocks of {tokens}",
                    x.shape()
                )));
            }
            let (groups, c) = (x.rows() / tokens, x.cols());
            let mut data = vec![0.0; groups * c];
            for r in 0..x.rows() {
                let dst = &mut data[(r / tokens) * c..(r / tokens + 1) * c];
                for (d, v) in dst.iter_mut().zip(x.row(r)) {
                    *d += v;
                }
            }
            let scale = 1.0 / tokens as f64;
            data.iter_mut().for_each(|v| *v *= scale);
            Tensor::matrix(groups, c, data)?
        };
        self.tape.push(
            value,
            Op::MeanPool {
                x: self.id,
                tokens,
            },
            "mean_pool",
        )
    }
}

/// Interleaves `T` equally shaped `[n×d]` matrices into `[n·T×d]`, so that
/// rows `s·T .. s·T+T` hold the `T` tokens of group `s`.
pub fn interleave<'t>(parts: &[Var<'t>]) -> Result<Var<'t>, NumError> {
    let first = parts
        .first()
        .ok_or_else(|| NumError::Contract("interleave needs at least one part".into()))?;
    let tape = first.tape;
    let value = {
        let shape = first.shape();
        if shape.len() != 2 {
            return Err(NumError::Contract(format!(
                "interleave needs matrices, got {shape:?}"
            )));
        }
        let (n, d, t) = (shape[0], shape[1], parts.len());
        let mut data = vec![0.0; n * t * d];
        for (slot, p) in parts.iter().enumerate() {
            first.same_tape(*p);
            let pv = p.value();
            if pv.shape() != shape.as_slice() {
                return Err(Var::shape_err("interleave", &first.value(), &pv));
            }
            for s in 0..n {
                data[(s * t + slot) * d..(s * t + slot + 1) * d].copy_from_slice(pv.row(s));
            }
        }
        Tensor::matrix(n * t, d, data)?
    };
    tape.push(
        value,
        Op::Interleave(parts.iter().map(|p| p.id).collect()),
        "interleave",
    )
}

/// Multi-head scaled dot-product self-attention within groups of `tokens`
/// consecutive rows. `q`, `k`, `v` are `[n·T×d]`; head `h` uses columns
/// `h·d/H .. (h+1)·d/H`. Softmax runs over the keys of the same group.
pub fn attention<'t>(
    q: Var<'t>,
    k: Var<'t>,
    v: Var<'t>,
    tokens: usize,
    heads: usize,
) -> Result<Var<'t>, NumError> {
    q.same_tape(k);
    q.same_tape(v);
    let tape = q.tape;
    let (value, probs) = {
        let (qv, kv, vv) = (q.value(), k.value(), v.value());
        if qv.shape() != kv.shape() || qv.shape() != vv.shape() || !qv.is_matrix() {
            return Err(Var::shape_err("attention", &qv, &kv));
        }
        check_attention_dims(&qv, tokens, heads)?;
        let probs = attention_probs(&qv, &kv, tokens, heads);
        let out = attention_apply(&probs, &vv, tokens, heads);
        (out, probs)
    };
    tape.push(
        value,
        Op::Attention(Box::new(AttentionNode {
            q: q.id,
            k: k.id,
            v: v.id,
            tokens,
            heads,
            probs,
        })),
        "attention",
    )
}

fn check_attention_dims(q: &Tensor, tokens: usize, heads: usize) -> Result<(), NumError> {
    if tokens == 0 || q.rows() % tokens != 0 || heads == 0 || q.cols() % heads != 0 {
        return Err(NumError::Contract(format!(
            "attention over {:?} with {tokens} tokens and {heads} heads",
            q.shape()
        )));
    }
    Ok(())
}

/// Softmax attention weights laid out `[group][head][query][key]`.
pub fn attention_weights(
    q: &Tensor,
    k: &Tensor,
    tokens: usize,
    heads: usize,
) -> Result<Vec<f64>, NumError> {
    if q.shape() != k.shape() {
        return Err(Var::shape_err("attention_weights", q, k));
    }
    check_attention_dims(q, tokens, heads)?;
    Ok(attention_probs(q, k, tokens, heads))
}

fn attention_probs(q: &Tensor, k: &Tensor, tokens: usize, heads: usize) -> Vec<f64> {
    let (rows, d) = (q.rows(), q.cols());
    let groups = rows / tokens;
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let (qd, kd) = (q.data(), k.data());
    let mut probs = vec![0.0; groups * heads * tokens * tokens];
    for s in 0..groups {
        for h in 0..heads {
            let base = ((s * heads) + h) * tokens * tokens;
            for t in 0..tokens {
                let qrow = &qd[(s * tokens + t) * d + h * dk..(s * tokens + t) * d + (h + 1) * dk];
                let scores = &mut probs[base + t * tokens..base + (t + 1) * tokens];
                for (u, score) in scores.iter_mut().enumerate() {
                    let krow =
                        &kd[(s * tokens + u) * d + h * dk..(s * tokens + u) * d + (h + 1) * dk];
                    *score = qrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>() * scale;
                }
                softmax_in_place(scores);
            }
        }
    }
    probs
}

fn attention_apply(probs: &[f64], v: &Tensor, tokens: usize, heads: usize) -> Tensor {
    let (rows, d) = (v.rows(), v.cols());
    let dk = d / heads;
    let vd = v.data();
    let mut out = vec![0.0; rows * d];
    for s in 0..rows / tokens {
        for h in 0..heads {
            let base = ((s * heads) + h) * tokens * tokens;
            for t in 0..tokens {
                let dst = (s * tokens + t) * d + h * dk;
                for u in 0..tokens {
                    let p = probs[base + t * tokens + u];
                    let src = (s * tokens + u) * d + h * dk;
                    for c in 0..dk {
                        out[dst + c] += p * vd[src + c];
                    }
                }
            }
        }
    }
    Tensor::matrix(rows, d, out).expect("attention output shape")
}

fn attention_backward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    probs: &[f64],
    g: &Tensor,
    tokens: usize,
    heads: usize,
) -> (Tensor, Tensor, Tensor) {
    let (rows, d) = (q.rows(), q.cols());
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let (qd, kd, vd, gd) = (q.data(), k.data(), v.data(), g.data());
    let mut dq = vec![0.0; rows * d];
    let mut dkey = vec![0.0; rows * d];
    let mut dv = vec![0.0; rows * d];
    let mut dp = vec![0.0; tokens];
    for s in 0..rows / tokens {
        for h in 0..heads {
            let base = ((s * heads) + h) * tokens * tokens;
            let off = |t: usize| (s * tokens + t) * d + h * dk;
            for t in 0..tokens {
                let p = &probs[base + t * tokens..base + (t + 1) * tokens];
                let grow = &gd[off(t)..off(t) + dk];
                for u in 0..tokens {
                    let vrow = &vd[off(u)..off(u) + dk];
                    dp[u] = grow.iter().zip(vrow).map(|(a, b)| a * b).sum();
                    for c in 0..dk {
                        dv[off(u) + c] += p[u] * grow[c];
                    }
                }
                let inner: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                for u in 0..tokens {
                    let ds = p[u] * (dp[u] - inner) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for c in 0..dk {
                        dq[off(t) + c] += ds * kd[off(u) + c];
                        dkey[off(u) + c] += ds * qd[off(t) + c];
                    }
                }
            }
        }
    }
    let shape = q.shape().to_vec();
    (
        Tensor::new(shape.clone(), dq).unwrap(),
        Tensor::new(shape.clone(), dkey).unwrap(),
        Tensor::new(shape, dv).unwrap(),
    )
}

pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(row: &mut [f64]) {
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

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let c = x.cols();
    for i in 0..x.rows() {
        softmax_in_place(&mut out.data_mut()[i * c..(i + 1) * c]);
    }
    out
}
