//! Reverse-mode differentiation by recording operations in execution order.
//!
//! Every operation appends a node holding its forward value and whatever the
//! backward rule needs. [`Tape::backward`] walks the nodes in reverse and
//! accumulates gradients into parents that require them. Trainable tensors
//! are bound by name, so a parameter used many times in one forward pass is a
//! single leaf and its gradient is accumulated once.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::ops::{self, dot};
use crate::numerics::{ParamSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    DivScalar(Var, Var),
    Exp(Var),
    Clamp(Var, f64, f64),
    Tanh(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        rstd: Vec<f64>,
        floored: Vec<bool>,
    },
    Softmax(Var),
    LogSoftmax(Var),
    L2Normalize {
        x: Var,
        norms: Vec<f64>,
    },
    SegmentAttention {
        q: Var,
        k: Var,
        v: Var,
        lens: Vec<usize>,
        scale: f64,
        probs: Vec<f64>,
    },
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    SegmentWeightedSum {
        w: Var,
        h: Var,
    },
    Reshape(Var),
    Diag(Var),
    WeightedSum {
        x: Var,
        w: Vec<f64>,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: HashMap<String, Var>,
    params: Vec<(String, Var)>,
    track_params: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bound: HashMap::new(),
            params: Vec::new(),
            track_params: true,
        }
    }

    /// A tape on which parameters are bound as constants; nothing requires
    /// gradients, so backward is never needed.
    pub fn inference() -> Self {
        Self {
            track_params: false,
            ..Self::new()
        }
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

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.values()[0]
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Binds a frozen tensor once per tape under `name`.
    pub fn constant_named(&mut self, name: &str, t: &Tensor) -> Var {
        if let Some(&v) = self.bound.get(name) {
            return v;
        }
        let v = self.push(t.clone(), Op::Leaf, false);
        self.bound.insert(name.to_string(), v);
        v
    }

    /// Binds a trainable tensor once per tape under `name`.
    pub fn param(&mut self, name: &str, t: &Tensor) -> Var {
        if let Some(&v) = self.bound.get(name) {
            return v;
        }
        let v = self.push(t.clone(), Op::Leaf, self.track_params);
        self.bound.insert(name.to_string(), v);
        if self.track_params {
            self.params.push((name.to_string(), v));
        }
        v
    }

    // ---- operations ------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = ops::matmul(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`, the natural form for `x · Wᵀ` with `W: [out×in]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = ops::matmul_nt(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMulNt(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose()?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dimension("add", ta.shape(), tb.shape()));
        }
        let values = ta.values().iter().zip(tb.values()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), values)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dimension("mul", ta.shape(), tb.shape()));
        }
        let values = ta.values().iter().zip(tb.values()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), values)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Adds a length-`c` bias to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        let (r, c) = tx.rows_cols();
        if tb.len() != c {
            return Err(Error::dimension("add_bias", tx.shape(), tb.shape()));
        }
        let mut values = tx.values().to_vec();
        for i in 0..r {
            for (o, &bv) in values[i * c..(i + 1) * c].iter_mut().zip(tb.values()) {
                *o += bv;
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), values)?;
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(value, Op::AddBias(x, b), rg))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let t = self.value(a);
        let values = t.values().iter().map(|x| x * k).collect();
        let value = Tensor::new(t.shape().to_vec(), values).expect("shape preserved");
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, k), rg)
    }

    /// Divides every entry of `x` by the single-element tensor `s`.
    pub fn div_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let ts = self.value(s);
        if ts.len() != 1 {
            return Err(Error::dimension("div_scalar", self.value(x).shape(), ts.shape()));
        }
        let d = ts.values()[0];
        let t = self.value(x);
        let values = t.values().iter().map(|v| v / d).collect();
        let value = Tensor::new(t.shape().to_vec(), values)?;
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(value, Op::DivScalar(x, s), rg))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where the bound is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, ops::gelu_scalar, Op::Gelu(a))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let values = t.values().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(t.shape().to_vec(), values).expect("shape preserved");
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    pub fn layer_norm(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = t.rows_cols();
        if c < 2 {
            return Err(Error::Domain(format!("layer_norm needs at least 2 features, got {c}")));
        }
        let mut values = t.values().to_vec();
        let mut rstd = Vec::with_capacity(r);
        let mut floored = Vec::with_capacity(r);
        for i in 0..r {
            let (s, f) = ops::layer_norm_in_place(&mut values[i * c..(i + 1) * c]);
            rstd.push(s);
            floored.push(f);
        }
        let value = Tensor::new(t.shape().to_vec(), values)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::LayerNorm { x, rstd, floored }, rg))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let value = ops::softmax(self.value(x))?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Softmax(x), rg))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let value = ops::log_softmax(self.value(x))?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::LogSoftmax(x), rg))
    }

    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = t.rows_cols();
        let mut values = t.values().to_vec();
        let mut norms = Vec::with_capacity(r);
        for i in 0..r {
            norms.push(ops::l2_normalize_in_place(&mut values[i * c..(i + 1) * c])?);
        }
        let value = Tensor::new(t.shape().to_vec(), values)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::L2Normalize { x, norms }, rg))
    }

    /// Scaled dot-product self-attention applied independently to
    /// consecutive row segments of lengths `lens`.
    pub fn segment_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        lens: &[usize],
        scale: f64,
    ) -> Result<Var> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        if tq.rank() != 2 || tq.shape() != tk.shape() || tv.rank() != 2 || tv.shape()[0] != tq.shape()[0] {
            return Err(Error::dimension("segment_attention", tq.shape(), tk.shape()));
        }
        let total: usize = lens.iter().sum();
        if total != tq.shape()[0] || lens.iter().any(|&l| l == 0) {
            return Err(Error::dimension("segment_attention", tq.shape(), lens));
        }
        let dk = tq.shape()[1];
        let dv = tv.shape()[1];
        let mut out = vec![0.0; total * dv];
        let mut probs = Vec::with_capacity(lens.iter().map(|l| l * l).sum());
        let mut start = 0;
        for &len in lens {
            let mut p = vec![0.0; len * len];
            for i in 0..len {
                let qi = &tq.values()[(start + i) * dk..(start + i + 1) * dk];
                for j in 0..len {
                    let kj = &tk.values()[(start + j) * dk..(start + j + 1) * dk];
                    p[i * len + j] = dot(qi, kj) * scale;
                }
                ops::softmax_in_place(&mut p[i * len..(i + 1) * len]);
            }
            ops::matmul_into(
                &p,
                &tv.values()[start * dv..(start + len) * dv],
                len,
                len,
                dv,
                &mut out[start * dv..(start + len) * dv],
            );
            probs.extend_from_slice(&p);
            start += len;
        }
        let value = Tensor::new(vec![total, dv], out)?;
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(
            value,
            Op::SegmentAttention {
                q,
                k,
                v,
                lens: lens.to_vec(),
                scale,
                probs,
            },
            rg,
        ))
    }

    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = t.rows_cols();
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::dimension("gather_rows", t.shape(), &[bad]));
        }
        if rows.is_empty() {
            return Err(Error::Domain("gather_rows with no rows".into()));
        }
        let mut values = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            values.extend_from_slice(&t.values()[i * c..(i + 1) * c]);
        }
        let value = Tensor::new(vec![rows.len(), c], values)?;
        let rg = self.rg(x);
        Ok(self.push(
            value,
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
            },
            rg,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Domain("concat_rows of nothing".into()))?;
        let c = self.value(*first).rows_cols().1;
        let mut values = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            let (r, pc) = t.rows_cols();
            if pc != c {
                return Err(Error::dimension("concat_rows", self.value(*first).shape(), t.shape()));
            }
            values.extend_from_slice(t.values());
            rows += r;
        }
        let value = Tensor::new(vec![rows, c], values)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Row `b` of the output is `Σ_t w[b,t] · h[b·T + t]`.
    pub fn segment_weighted_sum(&mut self, w: Var, h: Var) -> Result<Var> {
        let (tw, th) = (self.value(w), self.value(h));
        if tw.rank() != 2 || th.rank() != 2 || tw.shape()[0] * tw.shape()[1] != th.shape()[0] {
            return Err(Error::dimension("segment_weighted_sum", tw.shape(), th.shape()));
        }
        let (b, t) = (tw.shape()[0], tw.shape()[1]);
        let d = th.shape()[1];
        let mut out = vec![0.0; b * d];
        for bi in 0..b {
            let orow = &mut out[bi * d..(bi + 1) * d];
            for ti in 0..t {
                let a = tw.values()[bi * t + ti];
                let hrow = &th.values()[(bi * t + ti) * d..(bi * t + ti + 1) * d];
                for (o, &hv) in orow.iter_mut().zip(hrow) {
                    *o += a * hv;
                }
            }
        }
        let value = Tensor::new(vec![b, d], out)?;
        let rg = self.rg(w) || self.rg(h);
        Ok(self.push(value, Op::SegmentWeightedSum { w, h }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    pub fn diag(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 || t.shape()[0] != t.shape()[1] {
            return Err(Error::dimension("diag", t.shape(), &[]));
        }
        let n = t.shape()[0];
        let value = Tensor::vector((0..n).map(|i| t.values()[i * n + i]).collect());
        let rg = self.rg(x);
        Ok(self.push(value, Op::Diag(x), rg))
    }

    /// `Σ_i w_i · x_i` with constant weights, as a one-element tensor.
    pub fn weighted_sum(&mut self, x: Var, w: &[f64]) -> Result<Var> {
        let t = self.value(x);
        if t.len() != w.len() {
            return Err(Error::dimension("weighted_sum", t.shape(), &[w.len()]));
        }
        let value = Tensor::scalar(dot(t.values(), w));
        let rg = self.rg(x);
        Ok(self.push(value, Op::WeightedSum { x, w: w.to_vec() }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).values().iter().sum());
        let rg = self.rg(x);
        self.push(value, Op::Sum(x), rg)
    }

    // ---- backward --------------------------------------------------------

    /// Propagates from a single-element `root` back to every node that
    /// requires a gradient.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::Domain(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.rg(*a) {
                    // dA = dY · Bᵀ
                    ops::matmul_nt_into(g, tb.values(), m, n, k, self.slot(grads, *a));
                }
                if self.rg(*b) {
                    // dB = Aᵀ · dY
                    ops::matmul_tn_into(ta.values(), g, m, k, n, self.slot(grads, *b));
                }
            }
            Op::MatMulNt(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[0]);
                if self.rg(*a) {
                    // dA = dY · B
                    ops::matmul_into(g, tb.values(), m, n, k, self.slot(grads, *a));
                }
                if self.rg(*b) {
                    // dB = dYᵀ · A
                    ops::matmul_tn_into(g, ta.values(), m, n, k, self.slot(grads, *b));
                }
            }
            Op::Transpose(a) => {
                if self.rg(*a) {
                    let (r, c) = (y.shape()[0], y.shape()[1]);
                    let ga = self.slot(grads, *a);
                    for i in 0..r {
                        for j in 0..c {
                            ga[j * r + i] += g[i * c + j];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.rg(*v) {
                        axpy(self.slot(grads, *v), g, 1.0);
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let tb = self.value(*b).values();
                    for ((o, &gi), &bv) in self.slot(grads, *a).iter_mut().zip(g).zip(tb) {
                        *o += gi * bv;
                    }
                }
                if self.rg(*b) {
                    let ta = self.value(*a).values();
                    for ((o, &gi), &av) in self.slot(grads, *b).iter_mut().zip(g).zip(ta) {
                        *o += gi * av;
                    }
                }
            }
            Op::AddBias(x, b) => {
                if self.rg(*x) {
                    axpy(self.slot(grads, *x), g, 1.0);
                }
                if self.rg(*b) {
                    let c = self.value(*b).len();
                    let gb = self.slot(grads, *b);
                    for row in g.chunks(c) {
                        axpy(gb, row, 1.0);
                    }
                }
            }
            Op::Scale(a, k) => {
                if self.rg(*a) {
                    axpy(self.slot(grads, *a), g, *k);
                }
            }
            Op::DivScalar(x, s) => {
                let d = self.scalar(*s);
                if self.rg(*x) {
                    axpy(self.slot(grads, *x), g, 1.0 / d);
                }
                if self.rg(*s) {
                    // y = x/s  ⇒  ∂y/∂s = −y/s
                    let acc: f64 = g.iter().zip(y.values()).map(|(gi, yi)| gi * yi).sum();
                    self.slot(grads, *s)[0] -= acc / d;
                }
            }
            Op::Exp(a) => self.elementwise(grads, *a, g, |_, yv| yv, y),
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                self.elementwise(grads, *a, g, move |xv, _| f64::from(xv >= lo && xv <= hi), y)
            }
            Op::Tanh(a) => self.elementwise(grads, *a, g, |_, yv| 1.0 - yv * yv, y),
            Op::Gelu(a) => self.elementwise(grads, *a, g, |xv, _| ops::gelu_grad_scalar(xv), y),
            Op::LayerNorm { x, rstd, floored } => {
                if self.rg(*x) {
                    let (_, c) = y.rows_cols();
                    let n = c as f64;
                    let gx = self.slot(grads, *x);
                    for (i, (&s, &fl)) in rstd.iter().zip(floored).enumerate() {
                        let gr = &g[i * c..(i + 1) * c];
                        let yr = &y.values()[i * c..(i + 1) * c];
                        let mean_g = gr.iter().sum::<f64>() / n;
                        let mean_gy = if fl { 0.0 } else { dot(gr, yr) / n };
                        for j in 0..c {
                            gx[i * c + j] += s * (gr[j] - mean_g - yr[j] * mean_gy);
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                if self.rg(*x) {
                    let (_, c) = y.rows_cols();
                    let gx = self.slot(grads, *x);
                    for (i, (gr, yr)) in g.chunks(c).zip(y.values().chunks(c)).enumerate() {
                        let s = dot(gr, yr);
                        for j in 0..c {
                            gx[i * c + j] += yr[j] * (gr[j] - s);
                        }
                    }
                }
            }
            Op::LogSoftmax(x) => {
                if self.rg(*x) {
                    let (_, c) = y.rows_cols();
                    let gx = self.slot(grads, *x);
                    for (i, (gr, yr)) in g.chunks(c).zip(y.values().chunks(c)).enumerate() {
                        let s: f64 = gr.iter().sum();
                        for j in 0..c {
                            gx[i * c + j] += gr[j] - yr[j].exp() * s;
                        }
                    }
                }
            }
            Op::L2Normalize { x, norms } => {
                if self.rg(*x) {
                    let (_, c) = y.rows_cols();
                    let gx = self.slot(grads, *x);
                    for (i, &nrm) in norms.iter().enumerate() {
                        let gr = &g[i * c..(i + 1) * c];
                        let yr = &y.values()[i * c..(i + 1) * c];
                        let s = dot(gr, yr);
                        for j in 0..c {
                            gx[i * c + j] += (gr[j] - yr[j] * s) / nrm;
                        }
                    }
                }
            }
            Op::SegmentAttention {
                q,
                k,
                v,
                lens,
                scale,
                probs,
            } => self.backward_attention(grads, g, (*q, *k, *v), lens, *scale, probs),
            Op::GatherRows { x, rows } => {
                if self.rg(*x) {
                    let c = y.rows_cols().1;
                    let gx = self.slot(grads, *x);
                    for (o, &i) in rows.iter().enumerate() {
                        axpy(&mut gx[i * c..(i + 1) * c], &g[o * c..(o + 1) * c], 1.0);
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if self.rg(p) {
                        axpy(self.slot(grads, p), &g[offset..offset + n], 1.0);
                    }
                    offset += n;
                }
            }
            Op::SegmentWeightedSum { w, h } => {
                let (tw, th) = (self.value(*w), self.value(*h));
                let (b, t) = (tw.shape()[0], tw.shape()[1]);
                let d = th.shape()[1];
                if self.rg(*w) {
                    let gw = self.slot(grads, *w);
                    for bi in 0..b {
                        for ti in 0..t {
                            let hrow = &th.values()[(bi * t + ti) * d..(bi * t + ti + 1) * d];
                            gw[bi * t + ti] += dot(&g[bi * d..(bi + 1) * d], hrow);
                        }
                    }
                }
                if self.rg(*h) {
                    let gh = self.slot(grads, *h);
                    for bi in 0..b {
                        for ti in 0..t {
                            let a = tw.values()[bi * t + ti];
                            let row = bi * t + ti;
                            axpy(&mut gh[row * d..(row + 1) * d], &g[bi * d..(bi + 1) * d], a);
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if self.rg(*x) {
                    axpy(self.slot(grads, *x), g, 1.0);
                }
            }
            Op::Diag(x) => {
                if self.rg(*x) {
                    let n = y.len();
                    let gx = self.slot(grads, *x);
                    for i in 0..n {
                        gx[i * n + i] += g[i];
                    }
                }
            }
            Op::WeightedSum { x, w } => {
                if self.rg(*x) {
                    axpy(self.slot(grads, *x), w, g[0]);
                }
            }
            Op::Sum(x) => {
                if self.rg(*x) {
                    for o in self.slot(grads, *x).iter_mut() {
                        *o += g[0];
                    }
                }
            }
        }
    }

    fn backward_attention(
        &self,
        grads: &mut [Option<Vec<f64>>],
        g: &[f64],
        (q, k, v): (Var, Var, Var),
        lens: &[usize],
        scale: f64,
        probs: &[f64],
    ) {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let dk = tq.shape()[1];
        let dv = tv.shape()[1];
        let (mut gq, mut gk, mut gv) = (
            vec![0.0; tq.len()],
            vec![0.0; tk.len()],
            vec![0.0; tv.len()],
        );
        let (mut start, mut poff) = (0, 0);
        for &len in lens {
            let p = &probs[poff..poff + len * len];
            let go = &g[start * dv..(start + len) * dv];
            let vs = &tv.values()[start * dv..(start + len) * dv];
            // dV = Pᵀ · dO
            ops::matmul_tn_into(p, go, len, len, dv, &mut gv[start * dv..(start + len) * dv]);
            // dP = dO · Vᵀ, then dS = P ⊙ (dP − rowsum(dP ⊙ P))
            let mut ds = vec![0.0; len * len];
            ops::matmul_nt_into(go, vs, len, dv, len, &mut ds);
            for i in 0..len {
                let row = &mut ds[i * len..(i + 1) * len];
                let pr = &p[i * len..(i + 1) * len];
                let s = dot(row, pr);
                for (d, &pv) in row.iter_mut().zip(pr) {
                    *d = pv * (*d - s) * scale;
                }
            }
            let qs = &tq.values()[start * dk..(start + len) * dk];
            let ks = &tk.values()[start * dk..(start + len) * dk];
            ops::matmul_into(&ds, ks, len, len, dk, &mut gq[start * dk..(start + len) * dk]);
            ops::matmul_tn_into(&ds, qs, len, len, dk, &mut gk[start * dk..(start + len) * dk]);
            start += len;
            poff += len * len;
        }
        for (var, grad) in [(q, gq), (k, gk), (v, gv)] {
            if self.rg(var) {
                axpy(self.slot(grads, var), &grad, 1.0);
            }
        }
    }

    fn elementwise(
        &self,
        grads: &mut [Option<Vec<f64>>],
        a: Var,
        g: &[f64],
        local: impl Fn(f64, f64) -> f64,
        y: &Tensor,
    ) {
        if !self.rg(a) {
            return;
        }
        let x = self.value(a).values();
        let ga = self.slot(grads, a);
        for i in 0..ga.len() {
            ga[i] += g[i] * local(x[i], y.values()[i]);
        }
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> &'g mut [f64] {
        let n = self.value(v).len();
        grads[v.0].get_or_insert_with(|| vec![0.0; n])
    }
}

fn axpy(out: &mut [f64], x: &[f64], a: f64) {
    for (o, &xi) in out.iter_mut().zip(x) {
        *o += a * xi;
    }
}

/// Gradients produced by one backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(String, Var)>,
}

impl Gradients {
    pub fn of(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of a named parameter; `None` if it was bound but unreached.
    pub fn param(&self, name: &str) -> Option<&[f64]> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .and_then(|(_, v)| self.of(*v))
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, Option<&[f64]>)> {
        self.params.iter().map(|(n, v)| (n.as_str(), self.of(*v)))
    }

    pub fn all_finite(&self) -> bool {
        self.params()
            .all(|(_, g)| g.map_or(true, |g| g.iter().all(|x| x.is_finite())))
    }

    /// Stores each parameter's gradient in its tensor's grad slot; bound but
    /// unreached parameters get zeros.
    pub fn write_into<P: ParamSet + ?Sized>(&self, set: &mut P) {
        set.for_each_param_mut(&mut |name, t| {
            let g = self
                .param(name)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.len()]);
            t.set_grad(Some(g)).expect("gradient shape matches parameter");
        });
    }
}
