//! A small define-by-run reverse-mode autodiff tape.
//!
//! A [`Graph`] records every value produced during a forward pass together
//! with the operation that produced it. [`Graph::backward`] walks the tape in
//! reverse and returns gradients for every node that depends on a leaf
//! created with [`Graph::param`].

pub mod conv;

use std::sync::Arc;

use crate::error::{shape_err, Result, SscError};
use crate::tensor::Tensor;
pub use conv::ConvGeom;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// How a modulation node routes gradients back to its inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModGrad {
    /// Exact derivative of `v * (1 + sigmoid(s)) + b`.
    Exact,
    /// Forward is unchanged, but `v` receives the upstream gradient as if the
    /// fusion were an addition (no cross-modal dependence).
    Detached,
}

/// Linear map from a `[C, in_len]` tensor to `[C, out_len]`, applied per
/// channel: `out[c, o] += w * in[c, i]` for every triplet.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMap {
    pub in_len: usize,
    pub out_len: usize,
    pub triplets: Vec<(usize, usize, f64)>,
}

impl SparseMap {
    pub fn apply(&self, src: &Tensor, out_shape: &[usize]) -> Result<Tensor> {
        let (c, n) = src.channels();
        if n != self.in_len || out_shape[0] != c || out_shape[1..].iter().product::<usize>() != self.out_len {
            return Err(shape_err("sparse map does not fit its operands"));
        }
        let mut out = Tensor::zeros(out_shape);
        let od = out.data_mut();
        for ch in 0..c {
            for &(o, i, w) in &self.triplets {
                od[ch * self.out_len + o] += w * src.data()[ch * self.in_len + i];
            }
        }
        Ok(out)
    }

    pub fn apply_transpose(&self, g: &Tensor, in_shape: &[usize]) -> Tensor {
        let c = in_shape[0];
        let mut out = Tensor::zeros(in_shape);
        let od = out.data_mut();
        for ch in 0..c {
            for &(o, i, w) in &self.triplets {
                od[ch * self.in_len + i] += w * g.data()[ch * self.out_len + o];
            }
        }
        out
    }
}

/// Scored entries of a cross-entropy term: `(spatial position in the logits,
/// target class)`.
pub type CeTargets = Arc<Vec<(usize, u8)>>;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    ConvT { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Scale(Var, f64),
    Modulate { v: Var, s: Var, b: Var, mode: ModGrad },
    AddModGrad { v: Var, t: Var, s: Var },
    Sparse { x: Var, map: Arc<SparseMap> },
    Softmax(Var),
    Linear { x: Var, w: Var, b: Var },
    SmoothCe { logits: Var, targets: CeTargets, eps: f64 },
    NegLogSigmoid { logit: Var, real: bool },
    WeightedSum(Vec<(Var, f64)>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Probabilities are clamped to this band before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that is treated as a constant.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn conv(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let y = conv::forward(self.value(x), self.value(w), b.map(|b| self.value(b)), geom)?;
        let mut ins = vec![x, w];
        ins.extend(b);
        Ok(self.push(y, Op::Conv { x, w, b, geom }, &ins))
    }

    /// Transposed convolution; `w` is `[C_in, C_out, kx, ky, kz]`.
    pub fn conv_transpose(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let xin = self.value(x);
        let wt = self.value(w);
        if xin.shape().len() != 4 || wt.shape().len() != 5 || wt.shape()[0] != xin.shape()[0] {
            return Err(shape_err(format!(
                "transposed conv: input {:?} weight {:?}",
                xin.shape(),
                wt.shape()
            )));
        }
        let out_dims = geom.transposed_out_dims(xin.dims3());
        let mut y = conv::backward_input(xin, wt, geom, out_dims)?;
        if let Some(b) = b {
            let bv = self.value(b);
            let (c, n) = y.channels();
            if bv.len() != c {
                return Err(shape_err("bias length != output channels"));
            }
            for ch in 0..c {
                let bb = bv.data()[ch];
                y.data_mut()[ch * n..(ch + 1) * n].iter_mut().for_each(|v| *v += bb);
            }
        }
        let mut ins = vec![x, w];
        ins.extend(b);
        Ok(self.push(y, Op::ConvT { x, w, b, geom }, &ins))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| if v.is_nan() { v } else { v.max(0.0) });
        self.push(y, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(sigmoid);
        self.push(y, Op::Sigmoid(x), &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), |p, q| p + q)?;
        Ok(self.push(y, Op::Add(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, alpha: f64) -> Var {
        let y = self.value(x).scale(alpha);
        self.push(y, Op::Scale(x, alpha), &[x])
    }

    /// `v * (1 + sigmoid(s)) + b`, elementwise.
    pub fn modulate(&mut self, v: Var, s: Var, b: Var, mode: ModGrad) -> Result<Var> {
        let (vv, sv, bv) = (self.value(v), self.value(s), self.value(b));
        vv.check_same(sv)?;
        vv.check_same(bv)?;
        let data = vv
            .data()
            .iter()
            .zip(sv.data())
            .zip(bv.data())
            .map(|((&x, &m), &c)| x * (1.0 + sigmoid(m)) + c)
            .collect();
        let y = Tensor::from_vec(vv.shape(), data)?;
        Ok(self.push(y, Op::Modulate { v, s, b, mode }, &[v, s, b]))
    }

    /// Forward `v + t`, backward as if `v` had been modulated by `s`:
    /// `v` receives `g * (1 + sigmoid(s))`, `t` receives `g` and `s` receives
    /// `g * v * sigmoid'(s)`.
    pub fn add_with_modulated_grad(&mut self, v: Var, t: Var, s: Var) -> Result<Var> {
        self.value(v).check_same(self.value(s))?;
        let y = self.value(v).zip_map(self.value(t), |p, q| p + q)?;
        Ok(self.push(y, Op::AddModGrad { v, t, s }, &[v, t, s]))
    }

    pub fn sparse(&mut self, x: Var, map: Arc<SparseMap>, out_shape: &[usize]) -> Result<Var> {
        let y = map.apply(self.value(x), out_shape)?;
        Ok(self.push(y, Op::Sparse { x, map }, &[x]))
    }

    /// Softmax over the leading (channel) axis at every spatial position.
    pub fn softmax(&mut self, x: Var) -> Var {
        let y = softmax_channels(self.value(x));
        self.push(y, Op::Softmax(x), &[x])
    }

    /// `w @ flatten(x) + b` with `w: [out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (m, n) = (wv.shape()[0], wv.len() / wv.shape()[0]);
        if xv.len() != n || bv.len() != m {
            return Err(shape_err(format!(
                "linear: input {} weight {:?} bias {}",
                xv.len(),
                wv.shape(),
                bv.len()
            )));
        }
        let y: Vec<f64> = (0..m)
            .map(|r| {
                wv.data()[r * n..(r + 1) * n]
                    .iter()
                    .zip(xv.data())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    + bv.data()[r]
            })
            .collect();
        let y = Tensor::from_vec(&[m], y)?;
        Ok(self.push(y, Op::Linear { x, w, b }, &[x, w, b]))
    }

    /// Mean label-smoothed cross entropy over `targets`. The smoothed target
    /// puts `1 - eps` on the true class and `eps / (K - 1)` on each of the
    /// other `K - 1` classes.
    pub fn smooth_ce(&mut self, logits: Var, targets: CeTargets, eps: f64) -> Result<Var> {
        let lv = self.value(logits);
        let (k, n) = lv.channels();
        if targets.is_empty() {
            return Err(SscError::EmptySelection("cross entropy over zero entries".into()));
        }
        if !(0.0..1.0).contains(&eps) {
            return Err(SscError::Config(format!("smoothing must be in [0,1), got {eps}")));
        }
        let mut total = 0.0;
        let mut col = vec![0.0; k];
        for &(pos, cls) in targets.iter() {
            if pos >= n || cls as usize >= k {
                return Err(shape_err(format!("target ({pos},{cls}) outside logits [{k},{n}]")));
            }
            for (c, slot) in col.iter_mut().enumerate() {
                *slot = lv.data()[c * n + pos];
            }
            let lse = log_sum_exp(&col);
            for (c, &z) in col.iter().enumerate() {
                let q = smoothed_target(c, cls as usize, k, eps);
                if q != 0.0 {
                    total -= q * (z - lse);
                }
            }
        }
        let y = Tensor::scalar(total / targets.len() as f64);
        Ok(self.push(y, Op::SmoothCe { logits, targets, eps }, &[logits]))
    }

    /// `-log(clamp(sigmoid(z)))` when `real`, else `-log(clamp(1 - sigmoid(z)))`.
    pub fn neg_log_sigmoid(&mut self, logit: Var, real: bool) -> Result<Var> {
        let z = self.value(logit);
        if z.len() != 1 {
            return Err(shape_err("expected a scalar logit"));
        }
        let p = sigmoid(z.item());
        let q = if real { p } else { 1.0 - p };
        let y = Tensor::scalar(-q.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln());
        Ok(self.push(y, Op::NegLogSigmoid { logit, real }, &[logit]))
    }

    /// `sum_i w_i * x_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut s = 0.0;
        for &(v, w) in terms {
            let t = self.value(v);
            if t.len() != 1 {
                return Err(shape_err("weighted_sum expects scalars"));
            }
            s += w * t.item();
        }
        let ins: Vec<Var> = terms.iter().map(|t| t.0).collect();
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum(terms.to_vec()), &ins))
    }

    /// Backpropagates from a scalar node.
    pub fn backward(&self, root: Var) -> Result<Grads> {
        let seed = Tensor::full(self.value(root).shape(), 1.0);
        self.backward_with(root, seed)
    }

    /// Backpropagates an arbitrary upstream gradient `seed` from `root`.
    pub fn backward_with(&self, root: Var, seed: Tensor) -> Result<Grads> {
        self.value(root).check_same(&seed)?;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(seed);
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.propagate(&node.op, &node.value, &g, &mut grads)?;
            }
            grads[idx] = Some(g);
        }
        Ok(Grads { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::Conv { x, w, b, geom } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                if self.needs_grad(*x) {
                    let gx = conv::backward_input(g, wv, *geom, xv.dims3())?;
                    self.accumulate(grads, *x, gx);
                }
                if self.needs_grad(*w) || b.is_some_and(|b| self.needs_grad(b)) {
                    let (gw, gb) = conv::backward_weight(g, xv, wv.shape(), *geom)?;
                    self.accumulate(grads, *w, gw);
                    if let Some(b) = b {
                        self.accumulate(grads, *b, gb);
                    }
                }
            }
            Op::ConvT { x, w, b, geom } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                if self.needs_grad(*x) {
                    let gx = conv::forward(g, wv, None, *geom)?;
                    self.accumulate(grads, *x, gx);
                }
                if self.needs_grad(*w) {
                    let (gw, _) = conv::backward_weight(xv, g, wv.shape(), *geom)?;
                    self.accumulate(grads, *w, gw);
                }
                if let Some(b) = b {
                    let (c, n) = g.channels();
                    let gb = (0..c).map(|ch| g.data()[ch * n..(ch + 1) * n].iter().sum()).collect();
                    self.accumulate(grads, *b, Tensor::from_vec(&[c], gb)?);
                }
            }
            Op::Relu(x) => {
                let gx = out.zip_map(g, |y, gy| if y > 0.0 { gy } else { 0.0 })?;
                self.accumulate(grads, *x, gx);
            }
            Op::Sigmoid(x) => {
                let gx = out.zip_map(g, |y, gy| gy * y * (1.0 - y))?;
                self.accumulate(grads, *x, gx);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Scale(x, alpha) => self.accumulate(grads, *x, g.scale(*alpha)),
            Op::Modulate { v, s, b, mode } => {
                let (vv, sv) = (self.value(*v), self.value(*s));
                let gv = match mode {
                    ModGrad::Exact => modulation_grad(g, sv)?,
                    ModGrad::Detached => g.clone(),
                };
                self.accumulate(grads, *v, gv);
                if self.needs_grad(*s) {
                    self.accumulate(grads, *s, scale_grad(g, vv, sv));
                }
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddModGrad { v, t, s } => {
                let (vv, sv) = (self.value(*v), self.value(*s));
                self.accumulate(grads, *v, modulation_grad(g, sv)?);
                self.accumulate(grads, *t, g.clone());
                if self.needs_grad(*s) {
                    self.accumulate(grads, *s, scale_grad(g, vv, sv));
                }
            }
            Op::Sparse { x, map } => {
                let gx = map.apply_transpose(g, self.value(*x).shape());
                self.accumulate(grads, *x, gx);
            }
            Op::Softmax(x) => {
                let (k, n) = out.channels();
                let mut gx = Tensor::zeros(out.shape());
                let (s, gd) = (out.data(), g.data());
                let gxd = gx.data_mut();
                for p in 0..n {
                    let dot: f64 = (0..k).map(|c| s[c * n + p] * gd[c * n + p]).sum();
                    for c in 0..k {
                        gxd[c * n + p] = s[c * n + p] * (gd[c * n + p] - dot);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (m, n) = (wv.shape()[0], xv.len());
                let gd = g.data();
                if self.needs_grad(*x) {
                    let mut gx = vec![0.0; n];
                    for r in 0..m {
                        let row = &wv.data()[r * n..(r + 1) * n];
                        for (a, &wv) in gx.iter_mut().zip(row) {
                            *a += gd[r] * wv;
                        }
                    }
                    self.accumulate(grads, *x, Tensor::from_vec(xv.shape(), gx)?);
                }
                if self.needs_grad(*w) {
                    let mut gw = Tensor::zeros(wv.shape());
                    for r in 0..m {
                        for (a, &xv) in gw.data_mut()[r * n..(r + 1) * n].iter_mut().zip(xv.data()) {
                            *a = gd[r] * xv;
                        }
                    }
                    self.accumulate(grads, *w, gw);
                }
                self.accumulate(grads, *b, g.clone());
            }
            Op::SmoothCe { logits, targets, eps } => {
                let lv = self.value(*logits);
                let (k, n) = lv.channels();
                let scale = g.item() / targets.len() as f64;
                let mut gl = Tensor::zeros(lv.shape());
                let mut col = vec![0.0; k];
                for &(pos, cls) in targets.iter() {
                    for (c, slot) in col.iter_mut().enumerate() {
                        *slot = lv.data()[c * n + pos];
                    }
                    let lse = log_sum_exp(&col);
                    for (c, &z) in col.iter().enumerate() {
                        let q = smoothed_target(c, cls as usize, k, *eps);
                        gl.data_mut()[c * n + pos] += scale * ((z - lse).exp() - q);
                    }
                }
                self.accumulate(grads, *logits, gl);
            }
            Op::NegLogSigmoid { logit, real } => {
                let p = sigmoid(self.value(*logit).item());
                let q = if *real { p } else { 1.0 - p };
                let d = if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&q) {
                    0.0
                } else if *real {
                    -(1.0 - p)
                } else {
                    p
                };
                self.accumulate(grads, *logit, Tensor::scalar(d * g.item()));
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    let shape = self.value(v).shape().to_vec();
                    self.accumulate(grads, v, Tensor::full(&shape, w * g.item()));
                }
            }
        }
        Ok(())
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

/// Gradient reaching the modulated input: `g * (1 + sigmoid(s))`.
pub fn modulation_grad(g: &Tensor, scale_logits: &Tensor) -> Result<Tensor> {
    g.zip_map(scale_logits, |gv, m| gv * (1.0 + sigmoid(m)))
}

fn scale_grad(g: &Tensor, v: &Tensor, s: &Tensor) -> Tensor {
    let data = g
        .data()
        .iter()
        .zip(v.data())
        .zip(s.data())
        .map(|((&gv, &x), &m)| {
            let sg = sigmoid(m);
            gv * x * sg * (1.0 - sg)
        })
        .collect();
    Tensor::from_vec(g.shape(), data).expect("same shape")
}

pub fn smoothed_target(c: usize, cls: usize, k: usize, eps: f64) -> f64 {
    if c == cls {
        1.0 - eps
    } else if k > 1 {
        eps / (k - 1) as f64
    } else {
        0.0
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax_channels(x: &Tensor) -> Tensor {
    let (k, n) = x.channels();
    let mut y = Tensor::zeros(x.shape());
    let xd = x.data();
    let yd = y.data_mut();
    for p in 0..n {
        let m = (0..k).map(|c| xd[c * n + p]).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for c in 0..k {
            let e = (xd[c * n + p] - m).exp();
            yd[c * n + p] = e;
            z += e;
        }
        for c in 0..k {
            yd[c * n + p] /= z;
        }
    }
    y
}
