//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation of one forward pass. Values live on the
//! tape; parameters are copied in once per graph through [`Graph::param`] and
//! their gradients are flushed back into the [`ParamStore`] by
//! [`Graph::backward`]. The op set is deliberately small: exactly what the
//! encoder-decoder stack, the sampler and the losses need.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tensor};

/// Variance floor inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatVecT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    AddScalar(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Stack(Vec<Var>),
    Row(Var, usize),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Softmax(Var, f64),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Vec<f64>,
        inv_std: f64,
    },
    CrossEntropy {
        logits: Var,
        probs: Vec<f64>,
        target: usize,
    },
    KlDivergence {
        log_p: Var,
        log_q: Var,
    },
    Sum(Var),
    Dot(Var, Var),
    AddN(Vec<Var>),
    Mask(Var, Vec<f64>),
    Cosine(Var, Var),
    StraightThrough(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if any flowed there.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// One recorded forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn dim_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Dimension {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Numerically stable softmax of `xs / temperature`.
pub fn softmax_values(xs: &[f64], temperature: f64) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = xs.iter().map(|x| ((x - m) / temperature).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= z);
    out
}

/// Numerically stable log-softmax.
pub fn log_softmax_values(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|x| x - lse).collect()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn acc<F: FnOnce(&mut [f64])>(grads: &mut [Option<Vec<f64>>], len: usize, v: Var, f: F) {
    let g = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
    f(g);
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// A differentiable input leaf.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A constant leaf; no gradient is propagated to it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Binds a stored parameter onto the tape; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Param, p.trainable);
        self.params.insert(id, v);
        v
    }

    /// Matrix product `a @ b`; `b` may be a vector.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.is_matrix() || ta.cols() != tb.rows() || tb.shape().len() > 2 {
            return Err(dim_err("matmul", ta, tb));
        }
        let (m, k) = (ta.rows(), ta.cols());
        let out = if tb.is_vector() {
            let x = tb.data();
            let data = (0..m)
                .map(|i| ta.row(i).iter().zip(x).map(|(w, x)| w * x).sum())
                .collect();
            Tensor::from_parts(vec![m], data)
        } else {
            let n = tb.cols();
            let mut data = vec![0.0; m * n];
            for i in 0..m {
                let out_row = &mut data[i * n..(i + 1) * n];
                for (p, &aik) in ta.row(i).iter().enumerate().take(k) {
                    for (o, bv) in out_row.iter_mut().zip(tb.row(p)) {
                        *o += aik * bv;
                    }
                }
            }
            Tensor::from_parts(vec![m, n], data)
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `aᵀ v` for a matrix `a` of shape `[m, k]` and a vector `v` of length `m`.
    pub fn matvec_t(&mut self, a: Var, v: Var) -> Result<Var> {
        let (ta, tv) = (self.value(a), self.value(v));
        if !ta.is_matrix() || !tv.is_vector() || ta.rows() != tv.len() {
            return Err(dim_err("matvec_t", ta, tv));
        }
        let k = ta.cols();
        let mut data = vec![0.0; k];
        for (i, &w) in tv.data().iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (o, a) in data.iter_mut().zip(ta.row(i)) {
                *o += w * a;
            }
        }
        let rg = self.rg(a) || self.rg(v);
        Ok(self.push(Tensor::from_parts(vec![k], data), Op::MatVecT(a, v), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err(op, ta, tb));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_parts(ta.shape().to_vec(), data)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        Tensor::from_parts(ta.shape().to_vec(), ta.data().iter().map(|&x| f(x)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_with(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_with(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.map(a, |x| x * factor);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, factor), rg)
    }

    /// Multiplies every element of `a` by the scalar node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if !self.value(s).is_scalar() {
            return Err(dim_err("scale_by", self.value(a), self.value(s)));
        }
        let f = self.scalar(s);
        let out = self.map(a, |x| x * f);
        let rg = self.rg(a) || self.rg(s);
        Ok(self.push(out, Op::ScaleBy(a, s), rg))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.map(a, |x| x + c);
        let rg = self.rg(a);
        self.push(out, Op::AddScalar(a), rg)
    }

    /// Concatenation of vectors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Input("concat of nothing".into()));
        }
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if !t.is_vector() {
                return Err(dim_err("concat", self.value(parts[0]), t));
            }
            data.extend_from_slice(t.data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let n = data.len();
        Ok(self.push(Tensor::from_parts(vec![n], data), Op::Concat(parts.to_vec()), rg))
    }

    /// Contiguous sub-vector `a[start..start + len]`.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if !t.is_vector() || len == 0 || start + len > t.len() {
            return Err(Error::Dimension {
                op: "slice",
                left: t.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let data = t.data()[start..start + len].to_vec();
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(vec![len], data), Op::Slice(a, start), rg))
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::Input("stack of nothing".into()));
        }
        let d = self.value(rows[0]).len();
        let mut data = Vec::with_capacity(d * rows.len());
        for &r in rows {
            let t = self.value(r);
            if !t.is_vector() || t.len() != d {
                return Err(dim_err("stack", self.value(rows[0]), t));
            }
            data.extend_from_slice(t.data());
        }
        let rg = rows.iter().any(|&r| self.rg(r));
        Ok(self.push(
            Tensor::from_parts(vec![rows.len(), d], data),
            Op::Stack(rows.to_vec()),
            rg,
        ))
    }

    /// Embedding lookup: row `index` of matrix `table`.
    pub fn row(&mut self, table: Var, index: usize) -> Result<Var> {
        let t = self.value(table);
        if !t.is_matrix() {
            return Err(dim_err("row", t, t));
        }
        if index >= t.rows() {
            return Err(Error::Index {
                what: "row",
                index,
                size: t.rows(),
            });
        }
        let data = t.row(index).to_vec();
        let n = data.len();
        let rg = self.rg(table);
        Ok(self.push(Tensor::from_parts(vec![n], data), Op::Row(table, index), rg))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.map(a, f64::tanh);
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.map(a, sigmoid);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    /// `log(1 + exp(a))`, elementwise.
    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.map(a, softplus);
        let rg = self.rg(a);
        self.push(out, Op::Softplus(a), rg)
    }

    /// `softmax(a / temperature)` over a vector.
    pub fn softmax(&mut self, a: Var, temperature: f64) -> Result<Var> {
        if !(temperature > 0.0) {
            return Err(Error::Input(format!("softmax temperature {temperature} must be positive")));
        }
        let t = self.value(a);
        if !t.is_vector() {
            return Err(dim_err("softmax", t, t));
        }
        let out = Tensor::from_parts(t.shape().to_vec(), softmax_values(t.data(), temperature));
        let rg = self.rg(a);
        Ok(self.push(out, Op::Softmax(a, temperature), rg))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if !t.is_vector() {
            return Err(dim_err("log_softmax", t, t));
        }
        let out = Tensor::from_parts(t.shape().to_vec(), log_softmax_values(t.data()));
        let rg = self.rg(a);
        Ok(self.push(out, Op::LogSoftmax(a), rg))
    }

    /// Layer normalization of a vector followed by the affine `gain * x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let tx = self.value(x);
        if !tx.is_vector() {
            return Err(dim_err("layer_norm", tx, tx));
        }
        if self.value(gain).shape() != tx.shape() {
            return Err(dim_err("layer_norm", tx, self.value(gain)));
        }
        if self.value(bias).shape() != tx.shape() {
            return Err(dim_err("layer_norm", tx, self.value(bias)));
        }
        let n = tx.len() as f64;
        let mean = tx.data().iter().sum::<f64>() / n;
        let var = tx.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        let normed: Vec<f64> = tx.data().iter().map(|v| (v - mean) * inv_std).collect();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let data = normed.iter().zip(g).zip(b).map(|((x, g), b)| x * g + b).collect();
        let out = Tensor::from_parts(tx.shape().to_vec(), data);
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
            rg,
        ))
    }

    /// `-log softmax(logits)[target]` via log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let t = self.value(logits);
        if !t.is_vector() {
            return Err(dim_err("cross_entropy", t, t));
        }
        if target >= t.len() {
            return Err(Error::Index {
                what: "cross_entropy target",
                index: target,
                size: t.len(),
            });
        }
        let lse = log_sum_exp(t.data());
        let loss = lse - t.data()[target];
        let probs = softmax_values(t.data(), 1.0);
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                probs,
                target,
            },
            rg,
        ))
    }

    /// `Σ p (log p - log q)` with `p = exp(log_p)`; `log_q` is treated as a constant.
    pub fn kl_divergence(&mut self, log_p: Var, log_q: Var) -> Result<Var> {
        let (tp, tq) = (self.value(log_p), self.value(log_q));
        if !tp.is_vector() || tp.shape() != tq.shape() {
            return Err(dim_err("kl_divergence", tp, tq));
        }
        let kl: f64 = tp
            .data()
            .iter()
            .zip(tq.data())
            .map(|(&lp, &lq)| {
                let p = lp.exp();
                if p == 0.0 {
                    0.0
                } else {
                    p * (lp - lq)
                }
            })
            .sum();
        let rg = self.rg(log_p);
        Ok(self.push(Tensor::scalar(kl), Op::KlDivergence { log_p, log_q }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("dot", a, b)?;
        let s = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .sum();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b), rg))
    }

    /// Elementwise sum of equally shaped nodes.
    pub fn add_n(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Input("add_n of nothing".into()));
        }
        let mut out = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            let t = self.value(p);
            if t.shape() != out.shape() {
                return Err(dim_err("add_n", &out, t));
            }
            for (o, v) in out.data_mut().iter_mut().zip(t.data()) {
                *o += v;
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::AddN(parts.to_vec()), rg))
    }

    /// Mean of equally shaped nodes.
    pub fn mean_n(&mut self, parts: &[Var]) -> Result<Var> {
        let s = self.add_n(parts)?;
        Ok(self.scale(s, 1.0 / parts.len() as f64))
    }

    /// Multiplies by a fixed mask; the backward pass reuses the same mask.
    pub fn mask(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        let t = self.value(a);
        if t.len() != mask.len() {
            return Err(Error::Dimension {
                op: "mask",
                left: t.shape().to_vec(),
                right: vec![mask.len()],
            });
        }
        let data = t.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let out = Tensor::from_parts(t.shape().to_vec(), data);
        let rg = self.rg(a);
        Ok(self.push(out, Op::Mask(a, mask), rg))
    }

    /// Inverted dropout; identity when `rate == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if rate <= 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - rate;
        let mask = (0..self.value(a).len())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        self.mask(a, mask)
    }

    /// Cosine similarity of two vectors; zero (with zero gradient) if either norm is zero.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("cosine", a, b)?;
        let (ta, tb) = (self.value(a).data(), self.value(b).data());
        let na = ta.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = tb.iter().map(|x| x * x).sum::<f64>().sqrt();
        let c = if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            ta.iter().zip(tb).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(c), Op::Cosine(a, b), rg))
    }

    /// Straight-through node: the forward value is `hard`, the backward pass
    /// routes the incoming gradient unchanged to `soft`.
    pub fn straight_through(&mut self, hard: Tensor, soft: Var) -> Result<Var> {
        if hard.shape() != self.value(soft).shape() {
            return Err(dim_err("straight_through", &hard, self.value(soft)));
        }
        let rg = self.rg(soft);
        Ok(self.push(hard, Op::StraightThrough(soft), rg))
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Runs the reverse sweep and accumulates parameter gradients into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.gradients(loss)?;
        for (&id, &v) in &self.params {
            if let Some(g) = grads.get(v) {
                store.accumulate_grad(id, g);
            }
        }
        Ok(grads)
    }

    fn len_of(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.rows(), ta.cols());
                if tb.is_vector() {
                    if self.rg(*a) {
                        acc(grads, m * k, *a, |ga| {
                            for r in 0..m {
                                let gr = g[r];
                                if gr == 0.0 {
                                    continue;
                                }
                                for (d, x) in ga[r * k..(r + 1) * k].iter_mut().zip(tb.data()) {
                                    *d += gr * x;
                                }
                            }
                        });
                    }
                    if self.rg(*b) {
                        acc(grads, k, *b, |gb| {
                            for r in 0..m {
                                let gr = g[r];
                                if gr == 0.0 {
                                    continue;
                                }
                                for (d, w) in gb.iter_mut().zip(ta.row(r)) {
                                    *d += gr * w;
                                }
                            }
                        });
                    }
                } else {
                    let n = tb.cols();
                    if self.rg(*a) {
                        acc(grads, m * k, *a, |ga| {
                            for r in 0..m {
                                let grow = &g[r * n..(r + 1) * n];
                                for p in 0..k {
                                    ga[r * k + p] +=
                                        grow.iter().zip(tb.row(p)).map(|(x, y)| x * y).sum::<f64>();
                                }
                            }
                        });
                    }
                    if self.rg(*b) {
                        acc(grads, k * n, *b, |gb| {
                            for r in 0..m {
                                let grow = &g[r * n..(r + 1) * n];
                                for (p, &arp) in ta.row(r).iter().enumerate() {
                                    for (d, x) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                        *d += arp * x;
                                    }
                                }
                            }
                        });
                    }
                }
            }
            Op::MatVecT(a, v) => {
                let (ta, tv) = (self.value(*a), self.value(*v));
                let (m, k) = (ta.rows(), ta.cols());
                if self.rg(*a) {
                    acc(grads, m * k, *a, |ga| {
                        for (r, &w) in tv.data().iter().enumerate() {
                            if w == 0.0 {
                                continue;
                            }
                            for (d, x) in ga[r * k..(r + 1) * k].iter_mut().zip(g) {
                                *d += w * x;
                            }
                        }
                    });
                }
                if self.rg(*v) {
                    acc(grads, m, *v, |gv| {
                        for (r, d) in gv.iter_mut().enumerate() {
                            *d += ta.row(r).iter().zip(g).map(|(x, y)| x * y).sum::<f64>();
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.rg(v) {
                        acc(grads, g.len(), v, |d| d.iter_mut().zip(g).for_each(|(d, x)| *d += x));
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    acc(grads, g.len(), *a, |d| d.iter_mut().zip(g).for_each(|(d, x)| *d += x));
                }
                if self.rg(*b) {
                    acc(grads, g.len(), *b, |d| d.iter_mut().zip(g).for_each(|(d, x)| *d -= x));
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                if self.rg(*a) {
                    acc(grads, g.len(), *a, |d| {
                        for ((d, x), y) in d.iter_mut().zip(g).zip(tb) {
                            *d += x * y;
                        }
                    });
                }
                if self.rg(*b) {
                    acc(grads, g.len(), *b, |d| {
                        for ((d, x), y) in d.iter_mut().zip(g).zip(ta) {
                            *d += x * y;
                        }
                    });
                }
            }
            Op::Scale(a, f) => {
                acc(grads, g.len(), *a, |d| d.iter_mut().zip(g).for_each(|(d, x)| *d += f * x));
            }
            Op::ScaleBy(a, s) => {
                let sv = self.scalar(*s);
                if self.rg(*a) {
                    acc(grads, g.len(), *a, |d| d.iter_mut().zip(g).for_each(|(d, x)| *d += sv * x));
                }
                if self.rg(*s) {
                    let ta = self.value(*a).data();
                    let ds: f64 = ta.iter().zip(g).map(|(x, y)| x * y).sum();
                    acc(grads, 1, *s, |d| d[0] += ds);
                }
            }
            Op::AddScalar(a) => {
                acc(grads, g.len(), *a, |d| d.iter_mut().zip(g).for_each(|(d, x)| *d += x));
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.len_of(p);
                    if self.rg(p) {
                        let gs = &g[off..off + n];
                        acc(grads, n, p, |d| d.iter_mut().zip(gs).for_each(|(d, x)| *d += x));
                    }
                    off += n;
                }
            }
            Op::Slice(a, start) => {
                let n = self.len_of(*a);
                let start = *start;
                acc(grads, n, *a, |d| {
                    d[start..start + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, x)| *d += x)
                });
            }
            Op::Stack(rows) => {
                let dim = self.len_of(rows[0]);
                for (r, &v) in rows.iter().enumerate() {
                    if self.rg(v) {
                        let gs = &g[r * dim..(r + 1) * dim];
                        acc(grads, dim, v, |d| d.iter_mut().zip(gs).for_each(|(d, x)| *d += x));
                    }
                }
            }
            Op::Row(table, index) => {
                let n = self.len_of(*table);
                let cols = g.len();
                let off = index * cols;
                acc(grads, n, *table, |d| {
                    d[off..off + cols]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, x)| *d += x)
                });
            }
            Op::Tanh(a) => {
                acc(grads, g.len(), *a, |d| {
                    for ((d, x), y) in d.iter_mut().zip(g).zip(out) {
                        *d += x * (1.0 - y * y);
                    }
                });
            }
            Op::Sigmoid(a) => {
                acc(grads, g.len(), *a, |d| {
                    for ((d, x), y) in d.iter_mut().zip(g).zip(out) {
                        *d += x * y * (1.0 - y);
                    }
                });
            }
            Op::Softplus(a) => {
                let ta = self.value(*a).data();
                acc(grads, g.len(), *a, |d| {
                    for ((d, x), z) in d.iter_mut().zip(g).zip(ta) {
                        *d += x * sigmoid(*z);
                    }
                });
            }
            Op::Softmax(a, temp) => {
                let inner: f64 = g.iter().zip(out).map(|(x, y)| x * y).sum();
                let inv_t = 1.0 / temp;
                acc(grads, g.len(), *a, |d| {
                    for ((d, x), y) in d.iter_mut().zip(g).zip(out) {
                        *d += inv_t * y * (x - inner);
                    }
                });
            }
            Op::LogSoftmax(a) => {
                let total: f64 = g.iter().sum();
                acc(grads, g.len(), *a, |d| {
                    for ((d, x), y) in d.iter_mut().zip(g).zip(out) {
                        *d += x - y.exp() * total;
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            } => {
                let gv = self.value(*gain).data();
                let n = g.len() as f64;
                if self.rg(*gain) {
                    acc(grads, g.len(), *gain, |d| {
                        for ((d, x), h) in d.iter_mut().zip(g).zip(normed) {
                            *d += x * h;
                        }
                    });
                }
                if self.rg(*bias) {
                    acc(grads, g.len(), *bias, |d| d.iter_mut().zip(g).for_each(|(d, x)| *d += x));
                }
                if self.rg(*x) {
                    let dn: Vec<f64> = g.iter().zip(gv).map(|(a, b)| a * b).collect();
                    let s1: f64 = dn.iter().sum();
                    let s2: f64 = dn.iter().zip(normed).map(|(a, b)| a * b).sum();
                    acc(grads, g.len(), *x, |d| {
                        for ((d, dni), h) in d.iter_mut().zip(&dn).zip(normed) {
                            *d += inv_std / n * (n * dni - s1 - h * s2);
                        }
                    });
                }
            }
            Op::CrossEntropy {
                logits,
                probs,
                target,
            } => {
                let g0 = g[0];
                acc(grads, probs.len(), *logits, |d| {
                    for (j, (d, p)) in d.iter_mut().zip(probs).enumerate() {
                        let onehot = if j == *target { 1.0 } else { 0.0 };
                        *d += g0 * (p - onehot);
                    }
                });
            }
            Op::KlDivergence { log_p, log_q } => {
                let g0 = g[0];
                let (tp, tq) = (self.value(*log_p).data(), self.value(*log_q).data());
                acc(grads, tp.len(), *log_p, |d| {
                    for ((d, &lp), &lq) in d.iter_mut().zip(tp).zip(tq) {
                        let p = lp.exp();
                        if p > 0.0 {
                            *d += g0 * p * (lp - lq + 1.0);
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let g0 = g[0];
                acc(grads, self.len_of(*a), *a, |d| d.iter_mut().for_each(|d| *d += g0));
            }
            Op::Dot(a, b) => {
                let g0 = g[0];
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                if self.rg(*a) {
                    acc(grads, ta.len(), *a, |d| d.iter_mut().zip(tb).for_each(|(d, y)| *d += g0 * y));
                }
                if self.rg(*b) {
                    acc(grads, tb.len(), *b, |d| d.iter_mut().zip(ta).for_each(|(d, x)| *d += g0 * x));
                }
            }
            Op::AddN(parts) => {
                for &p in parts {
                    if self.rg(p) {
                        acc(grads, g.len(), p, |d| d.iter_mut().zip(g).for_each(|(d, x)| *d += x));
                    }
                }
            }
            Op::Mask(a, mask) => {
                acc(grads, g.len(), *a, |d| {
                    for ((d, x), m) in d.iter_mut().zip(g).zip(mask) {
                        *d += x * m;
                    }
                });
            }
            Op::Cosine(a, b) => {
                let g0 = g[0];
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                let na = ta.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = tb.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na == 0.0 || nb == 0.0 {
                    return;
                }
                let c = out[0];
                if self.rg(*a) {
                    acc(grads, ta.len(), *a, |d| {
                        for ((d, x), y) in d.iter_mut().zip(ta).zip(tb) {
                            *d += g0 * (y / (na * nb) - c * x / (na * na));
                        }
                    });
                }
                if self.rg(*b) {
                    acc(grads, tb.len(), *b, |d| {
                        for ((d, x), y) in d.iter_mut().zip(ta).zip(tb) {
                            *d += g0 * (x / (na * nb) - c * y / (nb * nb));
                        }
                    });
                }
            }
            Op::StraightThrough(soft) => {
                acc(grads, g.len(), *soft, |d| d.iter_mut().zip(g).for_each(|(d, x)| *d += x));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn tanh_at_zero() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![0.0]));
        let y = g.tanh(x);
        let s = g.sum(y);
        assert_eq!(g.scalar(s), 0.0);
        let grads = g.gradients(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[1.0]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        for tau in [0.1, 0.5, 1.0, 7.0] {
            let mut g = Graph::new();
            let x = g.input(Tensor::vector(vec![1.0, 1.0]));
            let p = g.softmax(x, tau).unwrap();
            assert_eq!(g.value(p).data(), &[0.5, 0.5]);
        }
    }

    #[test]
    fn identity_matmul() {
        let a = Tensor::matrix(3, 3, vec![1.0, -2.0, 3.5, 0.25, 4.0, -1.0, 9.0, 0.0, 2.0]).unwrap();
        let eye = Tensor::matrix(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let mut g = Graph::new();
        let i = g.constant(eye);
        let av = g.constant(a.clone());
        let out = g.matmul(i, av).unwrap();
        assert_eq!(g.value(out), &a);
    }

    #[test]
    fn matmul_shape_error_names_op_and_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]") && msg.contains("[2]"), "{msg}");
    }

    #[test]
    fn layer_norm_examples() {
        let cases: [(&[f64], f64, f64, &[f64]); 3] = [
            (&[3.0, 3.0, 3.0], 1.0, 0.0, &[0.0, 0.0, 0.0]),
            (&[1.0, -1.0], 1.0, 0.0, &[1.0, -1.0]),
            (&[2.0, 4.0], 2.0, 1.0, &[-1.0, 3.0]),
        ];
        for (x, gain, bias, expected) in cases {
            let n = x.len();
            let mut g = Graph::new();
            let xv = g.input(Tensor::vector(x.to_vec()));
            let gv = g.constant(Tensor::vector(vec![gain; n]));
            let bv = g.constant(Tensor::vector(vec![bias; n]));
            let y = g.layer_norm(xv, gv, bv).unwrap();
            for (a, b) in g.value(y).data().iter().zip(expected) {
                assert!(close(*a, *b, 1e-4), "{a} vs {b}");
                assert!(a.is_finite());
            }
        }
    }

    #[test]
    fn cross_entropy_examples() {
        let mut g = Graph::new();
        let u = g.input(Tensor::vector(vec![0.3; 4]));
        let ce = g.cross_entropy(u, 2).unwrap();
        assert!(close(g.scalar(ce), 4f64.ln(), 1e-12));

        let u = g.input(Tensor::vector(vec![1000.0, 0.0]));
        let ce = g.cross_entropy(u, 0).unwrap();
        assert!(g.scalar(ce).abs() < 1e-12);

        let u = g.input(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let ce = g.cross_entropy(u, 2).unwrap();
        let oracle = -(3f64.exp() / (1f64.exp() + 2f64.exp() + 3f64.exp())).ln();
        assert!(close(g.scalar(ce), oracle, 1e-12));
        assert!(close(g.scalar(ce), 0.40761, 1e-5));

        assert!(matches!(g.cross_entropy(u, 3), Err(Error::Index { .. })));
    }

    #[test]
    fn cross_entropy_is_stable_for_huge_logits() {
        let mut g = Graph::new();
        let u = g.input(Tensor::vector(vec![1e4, -1e4, 0.0]));
        let ce = g.cross_entropy(u, 1).unwrap();
        assert!(g.scalar(ce).is_finite());
        assert!(close(g.scalar(ce), 2e4, 1e-6));
    }

    #[test]
    fn kl_examples() {
        let ln = |v: &[f64]| Tensor::vector(v.iter().map(|x| x.ln()).collect());
        let mut g = Graph::new();
        let p = g.input(ln(&[0.2, 0.3, 0.5]));
        let q = g.constant(ln(&[0.2, 0.3, 0.5]));
        let kl = g.kl_divergence(p, q).unwrap();
        assert!(g.scalar(kl).abs() < 1e-15);

        let p = g.input(ln(&[1.0, 0.0]));
        let q = g.constant(ln(&[0.5, 0.5]));
        let kl = g.kl_divergence(p, q).unwrap();
        assert!(close(g.scalar(kl), 2f64.ln(), 1e-12));

        let p = g.input(ln(&[0.5, 0.5]));
        let q = g.constant(ln(&[0.9, 0.1]));
        let kl = g.kl_divergence(p, q).unwrap();
        let oracle = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert!(close(g.scalar(kl), oracle, 1e-12));
        assert!(close(g.scalar(kl), 0.5108, 1e-4));

        let short = g.constant(ln(&[1.0]));
        assert!(matches!(g.kl_divergence(p, short), Err(Error::Dimension { .. })));
    }

    #[test]
    fn kl_gradient_skips_prior() {
        let mut g = Graph::new();
        let p = g.input(Tensor::vector(vec![0.3f64.ln(), 0.7f64.ln()]));
        let q = g.input(Tensor::vector(vec![0.5f64.ln(), 0.5f64.ln()]));
        let kl = g.kl_divergence(p, q).unwrap();
        let grads = g.gradients(kl).unwrap();
        assert!(grads.get(p).is_some());
        assert!(grads.get(q).is_none());
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = g.input(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let grads = g.gradients(y).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[6.0]);
    }

    #[test]
    fn sum_of_softmax_has_zero_gradient() {
        let mut g = Graph::new();
        let u = g.input(Tensor::vector(vec![0.1, -2.0, 3.0, 0.7]));
        let p = g.softmax(u, 1.0).unwrap();
        let s = g.sum(p);
        let grads = g.gradients(s).unwrap();
        for v in grads.get(u).unwrap() {
            assert!(v.abs() < 1e-15);
        }
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let u = g.input(Tensor::vector(vec![0.1, 0.2]));
        assert!(matches!(g.gradients(u), Err(Error::Contract(_))));
    }

    #[test]
    fn backward_accumulates_into_store_until_cleared() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::vector(vec![2.0]));
        for _ in 0..2 {
            let mut g = Graph::new();
            let wv = g.param(&store, w);
            let y = g.mul(wv, wv).unwrap();
            let s = g.sum(y);
            g.backward(s, &mut store).unwrap();
        }
        assert_eq!(store.grad(w).unwrap().data(), &[8.0]);
        store.zero_grad();
        assert!(store.grad(w).is_none());
    }

    #[test]
    fn straight_through_forward_is_hard_backward_is_soft() {
        let mut g = Graph::new();
        let u = g.input(Tensor::vector(vec![0.2, 0.8]));
        let soft = g.softmax(u, 0.5).unwrap();
        let st = g.straight_through(Tensor::vector(vec![0.0, 1.0]), soft).unwrap();
        assert_eq!(g.value(st).data(), &[0.0, 1.0]);
        let w = g.constant(Tensor::vector(vec![1.0, -1.0]));
        let loss = g.dot(st, w).unwrap();
        let grads_st = g.gradients(loss).unwrap().get(u).unwrap().to_vec();

        let mut h = Graph::new();
        let u2 = h.input(Tensor::vector(vec![0.2, 0.8]));
        let soft2 = h.softmax(u2, 0.5).unwrap();
        let w2 = h.constant(Tensor::vector(vec![1.0, -1.0]));
        let loss2 = h.dot(soft2, w2).unwrap();
        let grads_soft = h.gradients(loss2).unwrap().get(u2).unwrap().to_vec();
        assert_eq!(grads_st, grads_soft);
    }
}
