use std::collections::HashMap;

use super::kernels::{self, ConvGeom};
use super::store::ParameterStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Upsample2x(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Relu(Var),
    LeakyRelu(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Abs(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Clamp(Var, T, T),
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    Reshape(Var),
    TileSpatial(Var),
    Sum(Var),
    Mean(Var),
    Reparam {
        mu: Var,
        log_sigma: Var,
        noise: Vec<T>,
    },
    GaussianKl {
        q_mu: Var,
        q_ls: Var,
        p_mu: Var,
        p_ls: Var,
    },
    Bce {
        pred: Var,
        target: Var,
    },
    BceLogits {
        logits: Var,
        target: Var,
        weight: Option<Var>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Clamp applied to predictions inside [`Graph::bce`].
pub const BCE_EPS: f64 = 1e-7;

/// Define-by-run computation graph with reverse-mode differentiation.
///
/// Nodes are appended in evaluation order; `backward` walks them in reverse,
/// so gradient accumulation order is fixed and results are deterministic.
#[derive(Debug)]
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    params: HashMap<String, Var>,
    frozen: Vec<String>,
    track_params: bool,
    backward_done: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::domain(format!("{op}: shape mismatch {a:?} vs {b:?}"))
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            params: HashMap::new(),
            frozen: Vec::new(),
            track_params: true,
            backward_done: false,
        }
    }

    /// Graph whose parameters are loaded as constants; nothing requires grad.
    pub fn inference() -> Self {
        Graph {
            track_params: false,
            ..Self::new()
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn item(&self, v: Var) -> T {
        self.nodes[v.0].value.item()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf that receives gradients.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Parameters under `prefix` loaded after this call are constants: they
    /// take no gradient and are skipped by [`Graph::accumulate_grads`].
    pub fn freeze(&mut self, prefix: &str) {
        self.frozen.push(prefix.to_string());
    }

    /// Loads a named parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParameterStore<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store
            .value(name)
            .ok_or_else(|| Error::state(format!("unknown parameter `{name}`")))?
            .clone();
        if self.frozen.iter().any(|p| name.starts_with(p.as_str())) {
            return Ok(self.push(value, Op::Leaf, false));
        }
        let v = self.push(value, Op::Leaf, self.track_params);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.push(value, Op::Leaf, false)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || ws[2] != ws[3] || stride == 0 {
            return Err(mismatch("conv2d", &xs, &ws));
        }
        if let Some(b) = b {
            if self.shape(b) != [ws[0]] {
                return Err(mismatch("conv2d bias", self.shape(b), &[ws[0]]));
            }
        }
        let k = ws[2];
        if xs[2] + 2 * pad < k || xs[3] + 2 * pad < k {
            return Err(mismatch("conv2d kernel larger than padded input", &xs, &ws));
        }
        let geom = ConvGeom {
            n: xs[0],
            c: xs[1],
            h: xs[2],
            w: xs[3],
            o: ws[0],
            k,
            stride,
            pad,
            ho: (xs[2] + 2 * pad - k) / stride + 1,
            wo: (xs[3] + 2 * pad - k) / stride + 1,
        };
        let mut out = vec![T::zero(); geom.n * geom.o * geom.ho * geom.wo];
        kernels::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &mut out,
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        let t = Tensor::from_vec(&[geom.n, geom.o, geom.ho, geom.wo], out)?;
        Ok(self.push(t, Op::Conv2d { x, w, b, geom }, rg))
    }

    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::domain(format!("upsample2x expects NCHW, got {s:?}")));
        }
        let mut out = vec![T::zero(); s[0] * s[1] * s[2] * s[3] * 4];
        kernels::upsample2x_forward(self.value(x).data(), s[0] * s[1], s[2], s[3], &mut out);
        let t = Tensor::from_vec(&[s[0], s[1], s[2] * 2, s[3] * 2], out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Upsample2x(x), rg))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws.len() != 2 || ws[1] != xs[1] {
            return Err(mismatch("linear", &xs, &ws));
        }
        if let Some(b) = b {
            if self.shape(b) != [ws[0]] {
                return Err(mismatch("linear bias", self.shape(b), &[ws[0]]));
            }
        }
        let (n, d, o) = (xs[0], xs[1], ws[0]);
        let mut out = vec![T::zero(); n * o];
        kernels::linear_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            n,
            d,
            o,
            &mut out,
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(Tensor::from_vec(&[n, o], out)?, Op::Linear { x, w, b }, rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let t = self.value(x).map(f);
        let rg = self.rg(x);
        self.push(t, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(T::zero()), Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::lit(slope);
        self.unary(x, move |v| if v > T::zero() { v } else { v * s }, Op::LeakyRelu(x, s))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.ln(), Op::Log(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.abs(), Op::Abs(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = T::lit(c);
        self.unary(x, move |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let c = T::lit(c);
        self.unary(x, move |v| v + c, Op::AddScalar(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (T::lit(lo), T::lit(hi));
        self.unary(x, move |v| v.max(lo).min(hi), Op::Clamp(x, lo, hi))
    }

    fn binary(&mut self, name: &str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(mismatch(name, va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::from_vec(va.shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Concatenates along axis 1 (channels for NCHW, features for NxD).
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::domain("concat_channels: no inputs"))?;
        let s0 = self.shape(*first).to_vec();
        if s0.len() < 2 {
            return Err(Error::domain(format!("concat_channels: rank too low {s0:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != s0.len() || s[0] != s0[0] || s[2..] != s0[2..] {
                return Err(mismatch("concat_channels", &s0, s));
            }
            total += s[1];
        }
        let inner: usize = s0[2..].iter().product();
        let n = s0[0];
        let mut out = Vec::with_capacity(n * total * inner);
        for i in 0..n {
            for &p in parts {
                let c = self.shape(p)[1];
                out.extend_from_slice(&self.value(p).data()[i * c * inner..][..c * inner]);
            }
        }
        let mut shape = s0.clone();
        shape[1] = total;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::from_vec(&shape, out)?, Op::Concat(parts.to_vec()), rg))
    }

    /// Channels `start..start + len` along axis 1.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 || start + len > s[1] || len == 0 {
            return Err(Error::domain(format!(
                "slice_channels: range {start}..{} out of bounds for {s:?}",
                start + len
            )));
        }
        let inner: usize = s[2..].iter().product();
        let mut out = Vec::with_capacity(s[0] * len * inner);
        for i in 0..s[0] {
            out.extend_from_slice(&self.value(x).data()[(i * s[1] + start) * inner..][..len * inner]);
        }
        let mut shape = s;
        shape[1] = len;
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_vec(&shape, out)?, Op::Slice { x, start }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// Repeats an `[N, D]` tensor over a spatial grid giving `[N, D, h, w]`.
    pub fn tile_spatial(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::domain(format!("tile_spatial expects [N, D], got {s:?}")));
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(s[0] * s[1] * hw);
        for &v in self.value(x).data() {
            out.extend(std::iter::repeat_n(v, hw));
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_vec(&[s[0], s[1], h, w], out)?, Op::TileSpatial(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let mut s = T::zero();
        for &v in self.value(x).data() {
            s += v;
        }
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let mut s = T::zero();
        for &v in t.data() {
            s += v;
        }
        let m = s / T::lit(t.len() as f64);
        let rg = self.rg(x);
        self.push(Tensor::scalar(m), Op::Mean(x), rg)
    }

    /// `mu + exp(log_sigma) * noise`
    pub fn reparameterize(&mut self, mu: Var, log_sigma: Var, noise: &Tensor<T>) -> Result<Var> {
        let (m, l) = (self.value(mu), self.value(log_sigma));
        if m.shape() != l.shape() {
            return Err(mismatch("reparameterize", m.shape(), l.shape()));
        }
        if m.shape() != noise.shape() {
            return Err(mismatch("reparameterize noise", m.shape(), noise.shape()));
        }
        let data = m
            .data()
            .iter()
            .zip(l.data())
            .zip(noise.data())
            .map(|((&a, &b), &e)| a + b.exp() * e)
            .collect();
        let t = Tensor::from_vec(m.shape(), data)?;
        let rg = self.rg(mu) || self.rg(log_sigma);
        Ok(self.push(
            t,
            Op::Reparam {
                mu,
                log_sigma,
                noise: noise.data().to_vec(),
            },
            rg,
        ))
    }

    /// Closed-form `KL(q || p)` for diagonal Gaussians, summed over all elements.
    pub fn gaussian_kl(&mut self, q_mu: Var, q_ls: Var, p_mu: Var, p_ls: Var) -> Result<Var> {
        let s = self.shape(q_mu).to_vec();
        for v in [q_ls, p_mu, p_ls] {
            if self.shape(v) != s.as_slice() {
                return Err(mismatch("gaussian_kl", &s, self.shape(v)));
            }
        }
        let (qm, ql, pm, pl) = (
            self.value(q_mu).data(),
            self.value(q_ls).data(),
            self.value(p_mu).data(),
            self.value(p_ls).data(),
        );
        let mut total = T::zero();
        for i in 0..qm.len() {
            total += kl_elem(qm[i], ql[i], pm[i], pl[i]);
        }
        let rg = self.rg(q_mu) || self.rg(q_ls) || self.rg(p_mu) || self.rg(p_ls);
        Ok(self.push(Tensor::scalar(total), Op::GaussianKl { q_mu, q_ls, p_mu, p_ls }, rg))
    }

    /// Mean binary cross entropy with predictions clamped to `[1e-7, 1 - 1e-7]`.
    ///
    /// Gradients flow into `pred` only (evaluated at the clamped value).
    pub fn bce(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(mismatch("bce", p.shape(), t.shape()));
        }
        let mut total = T::zero();
        for (&pv, &tv) in p.data().iter().zip(t.data()) {
            let pc = clamp_prob(pv);
            total -= tv * pc.ln() + (T::one() - tv) * (T::one() - pc).ln();
        }
        let n = T::lit(p.len() as f64);
        let rg = self.rg(pred);
        Ok(self.push(Tensor::scalar(total / n), Op::Bce { pred, target }, rg))
    }

    /// Weighted binary cross entropy on logits, summed over elements.
    pub fn bce_logits_sum(&mut self, logits: Var, target: Var, weight: Option<Var>) -> Result<Var> {
        let (l, t) = (self.value(logits), self.value(target));
        if l.shape() != t.shape() {
            return Err(mismatch("bce_logits", l.shape(), t.shape()));
        }
        if let Some(w) = weight {
            if self.shape(w) != l.shape() {
                return Err(mismatch("bce_logits weight", l.shape(), self.shape(w)));
            }
        }
        let wd = weight.map(|w| self.value(w).data());
        let mut total = T::zero();
        for (i, (&lv, &tv)) in l.data().iter().zip(t.data()).enumerate() {
            let e = lv.max(T::zero()) - lv * tv + (T::one() + (-lv.abs()).exp()).ln();
            total += wd.map_or(e, |w| w[i] * e);
        }
        let rg = self.rg(logits);
        Ok(self.push(Tensor::scalar(total), Op::BceLogits { logits, target, weight }, rg))
    }

    /// Clears gradients so `backward` may run again.
    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.backward_done = false;
    }

    /// Reverse-mode sweep from a scalar loss.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::state("backward called twice without zero_grad"));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::domain(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        if !self.rg(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            if self.nodes[i].requires_grad {
                self.backprop_node(i, &g);
            }
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn add_grad(&mut self, v: Var, contrib: &[T]) {
        if !self.rg(v) {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => g.iter_mut().zip(contrib).for_each(|(a, &b)| *a += b),
            slot @ None => *slot = Some(contrib.to_vec()),
        }
    }

    fn unary_grad(&mut self, x: Var, g: &[T], f: impl Fn(T, T, T) -> T, out_idx: usize) {
        if !self.rg(x) {
            return;
        }
        let xv = self.nodes[x.0].value.data();
        let yv = self.nodes[out_idx].value.data();
        let contrib: Vec<T> = (0..g.len()).map(|i| f(xv[i], yv[i], g[i])).collect();
        self.add_grad(x, &contrib);
    }

    fn backprop_node(&mut self, i: usize, g: &[T]) {
        // Ops hold only indices and small scalars, so cloning the tag is cheap
        // except for Reparam noise which is read in place below.
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let (x, w, b, geom) = (*x, *w, *b, *geom);
                let mut gx = self.rg(x).then(|| vec![T::zero(); self.value(x).len()]);
                let mut gw = self.rg(w).then(|| vec![T::zero(); self.value(w).len()]);
                let mut gb = b.filter(|b| self.rg(*b)).map(|b| vec![T::zero(); self.value(b).len()]);
                kernels::conv2d_backward(
                    &geom,
                    self.value(x).data(),
                    self.value(w).data(),
                    g,
                    gx.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                if let Some(gx) = gx {
                    self.add_grad(x, &gx);
                }
                if let Some(gw) = gw {
                    self.add_grad(w, &gw);
                }
                if let (Some(b), Some(gb)) = (b, gb) {
                    self.add_grad(b, &gb);
                }
            }
            Op::Upsample2x(x) => {
                let x = *x;
                if self.rg(x) {
                    let s = self.shape(x).to_vec();
                    let mut gx = vec![T::zero(); self.value(x).len()];
                    kernels::upsample2x_backward(g, s[0] * s[1], s[2], s[3], &mut gx);
                    self.add_grad(x, &gx);
                }
            }
            Op::Linear { x, w, b } => {
                let (x, w, b) = (*x, *w, *b);
                let xs = self.shape(x).to_vec();
                let o = self.shape(w)[0];
                let mut gx = self.rg(x).then(|| vec![T::zero(); self.value(x).len()]);
                let mut gw = self.rg(w).then(|| vec![T::zero(); self.value(w).len()]);
                let mut gb = b.filter(|b| self.rg(*b)).map(|_| vec![T::zero(); o]);
                kernels::linear_backward(
                    self.value(x).data(),
                    self.value(w).data(),
                    g,
                    xs[0],
                    xs[1],
                    o,
                    gx.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                if let Some(gx) = gx {
                    self.add_grad(x, &gx);
                }
                if let Some(gw) = gw {
                    self.add_grad(w, &gw);
                }
                if let (Some(b), Some(gb)) = (b, gb) {
                    self.add_grad(b, &gb);
                }
            }
            Op::Relu(x) => {
                let x = *x;
                self.unary_grad(x, g, |xv, _, gv| if xv > T::zero() { gv } else { T::zero() }, i);
            }
            Op::LeakyRelu(x, s) => {
                let (x, s) = (*x, *s);
                self.unary_grad(x, g, move |xv, _, gv| if xv > T::zero() { gv } else { gv * s }, i);
            }
            Op::Sigmoid(x) => {
                let x = *x;
                self.unary_grad(x, g, |_, y, gv| gv * y * (T::one() - y), i);
            }
            Op::Tanh(x) => {
                let x = *x;
                self.unary_grad(x, g, |_, y, gv| gv * (T::one() - y * y), i);
            }
            Op::Exp(x) => {
                let x = *x;
                self.unary_grad(x, g, |_, y, gv| gv * y, i);
            }
            Op::Log(x) => {
                let x = *x;
                self.unary_grad(x, g, |xv, _, gv| gv / xv, i);
            }
            Op::Square(x) => {
                let x = *x;
                self.unary_grad(x, g, |xv, _, gv| gv * (xv + xv), i);
            }
            Op::Abs(x) => {
                let x = *x;
                self.unary_grad(x, g, |xv, _, gv| gv * xv.signum(), i);
            }
            Op::Scale(x, c) => {
                let (x, c) = (*x, *c);
                self.unary_grad(x, g, move |_, _, gv| gv * c, i);
            }
            Op::AddScalar(x) => {
                let x = *x;
                self.add_grad(x, g);
            }
            Op::Clamp(x, lo, hi) => {
                let (x, lo, hi) = (*x, *lo, *hi);
                self.unary_grad(
                    x,
                    g,
                    move |xv, _, gv| if xv >= lo && xv <= hi { gv } else { T::zero() },
                    i,
                );
            }
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                self.add_grad(a, g);
                self.add_grad(b, g);
            }
            Op::Sub(a, b) => {
                let (a, b) = (*a, *b);
                self.add_grad(a, g);
                if self.rg(b) {
                    let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                    self.add_grad(b, &neg);
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if self.rg(a) {
                    let ga: Vec<T> = g.iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
                    self.add_grad(a, &ga);
                }
                if self.rg(b) {
                    let gb: Vec<T> = g.iter().zip(self.value(a).data()).map(|(&x, &y)| x * y).collect();
                    self.add_grad(b, &gb);
                }
            }
            Op::Concat(parts) => {
                let parts = parts.clone();
                let s0 = self.shape(parts[0]).to_vec();
                let inner: usize = s0[2..].iter().product();
                let total: usize = parts.iter().map(|&p| self.shape(p)[1]).sum();
                let mut offset = 0;
                for p in parts {
                    let c = self.shape(p)[1];
                    if self.rg(p) {
                        let mut gp = Vec::with_capacity(s0[0] * c * inner);
                        for n in 0..s0[0] {
                            gp.extend_from_slice(&g[(n * total + offset) * inner..][..c * inner]);
                        }
                        self.add_grad(p, &gp);
                    }
                    offset += c;
                }
            }
            Op::Slice { x, start } => {
                let (x, start) = (*x, *start);
                if self.rg(x) {
                    let s = self.shape(x).to_vec();
                    let len = self.nodes[i].value.shape()[1];
                    let inner: usize = s[2..].iter().product();
                    let mut gx = vec![T::zero(); self.value(x).len()];
                    for n in 0..s[0] {
                        gx[(n * s[1] + start) * inner..][..len * inner]
                            .copy_from_slice(&g[n * len * inner..][..len * inner]);
                    }
                    self.add_grad(x, &gx);
                }
            }
            Op::Reshape(x) => {
                let x = *x;
                self.add_grad(x, g);
            }
            Op::TileSpatial(x) => {
                let x = *x;
                if self.rg(x) {
                    let s = self.nodes[i].value.shape();
                    let hw = s[2] * s[3];
                    let gx: Vec<T> = g
                        .chunks(hw)
                        .map(|c| {
                            let mut acc = T::zero();
                            for &v in c {
                                acc += v;
                            }
                            acc
                        })
                        .collect();
                    self.add_grad(x, &gx);
                }
            }
            Op::Sum(x) => {
                let x = *x;
                let gx = vec![g[0]; self.value(x).len()];
                self.add_grad(x, &gx);
            }
            Op::Mean(x) => {
                let x = *x;
                let n = self.value(x).len();
                let gx = vec![g[0] / T::lit(n as f64); n];
                self.add_grad(x, &gx);
            }
            Op::Reparam { mu, log_sigma, noise } => {
                let (mu, ls) = (*mu, *log_sigma);
                if self.rg(ls) {
                    let gl: Vec<T> = self
                        .value(ls)
                        .data()
                        .iter()
                        .zip(noise)
                        .zip(g)
                        .map(|((&l, &e), &gv)| gv * l.exp() * e)
                        .collect();
                    self.add_grad(ls, &gl);
                }
                self.add_grad(mu, g);
            }
            Op::GaussianKl { q_mu, q_ls, p_mu, p_ls } => {
                let (qmv, qlv, pmv, plv) = (*q_mu, *q_ls, *p_mu, *p_ls);
                let n = self.value(qmv).len();
                let (qm, ql, pm, pl) = (
                    self.value(qmv).data(),
                    self.value(qlv).data(),
                    self.value(pmv).data(),
                    self.value(plv).data(),
                );
                let mut gqm = Vec::with_capacity(n);
                let mut gql = Vec::with_capacity(n);
                let mut gpm = Vec::with_capacity(n);
                let mut gpl = Vec::with_capacity(n);
                let two = T::lit(2.0);
                for k in 0..n {
                    let d = qm[k] - pm[k];
                    let inv_p = (-two * pl[k]).exp();
                    let ratio = (two * (ql[k] - pl[k])).exp();
                    gqm.push(g[0] * d * inv_p);
                    gpm.push(-g[0] * d * inv_p);
                    gql.push(g[0] * (ratio - T::one()));
                    gpl.push(g[0] * (T::one() - ratio - d * d * inv_p));
                }
                self.add_grad(qmv, &gqm);
                self.add_grad(qlv, &gql);
                self.add_grad(pmv, &gpm);
                self.add_grad(plv, &gpl);
            }
            Op::Bce { pred, target } => {
                let (pred, target) = (*pred, *target);
                if self.rg(pred) {
                    let n = T::lit(self.value(pred).len() as f64);
                    let gp: Vec<T> = self
                        .value(pred)
                        .data()
                        .iter()
                        .zip(self.value(target).data())
                        .map(|(&p, &t)| {
                            let pc = clamp_prob(p);
                            g[0] * (pc - t) / (pc * (T::one() - pc)) / n
                        })
                        .collect();
                    self.add_grad(pred, &gp);
                }
            }
            Op::BceLogits { logits, target, weight } => {
                let (logits, target, weight) = (*logits, *target, *weight);
                if self.rg(logits) {
                    let wd = weight.map(|w| self.value(w).data());
                    let gl: Vec<T> = self
                        .value(logits)
                        .data()
                        .iter()
                        .zip(self.value(target).data())
                        .enumerate()
                        .map(|(k, (&l, &t))| {
                            let e = g[0] * (sigmoid(l) - t);
                            wd.map_or(e, |w| e * w[k])
                        })
                        .collect();
                    self.add_grad(logits, &gl);
                }
            }
        }
    }

    /// Gradients of every parameter loaded into this graph, by name.
    pub fn param_grads(&self) -> impl Iterator<Item = (&str, Option<&[T]>)> {
        self.params
            .iter()
            .map(|(name, v)| (name.as_str(), self.grads[v.0].as_deref()))
    }

    /// Adds this graph's parameter gradients into the store's gradient buffers.
    ///
    /// Parameters that were loaded but received no gradient get an explicit zero.
    pub fn accumulate_grads(&self, store: &mut ParameterStore<T>) -> Result<()> {
        if !self.backward_done {
            return Err(Error::state("accumulate_grads before backward"));
        }
        let mut names: Vec<&String> = self.params.keys().collect();
        names.sort();
        for name in names {
            let v = self.params[name];
            let len = self.value(v).len();
            match self.grads[v.0].as_deref() {
                Some(g) => store.add_grad(name, g)?,
                None => store.add_grad(name, &vec![T::zero(); len])?,
            }
        }
        Ok(())
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn clamp_prob<T: Scalar>(p: T) -> T {
    let eps = T::lit(BCE_EPS);
    p.max(eps).min(T::one() - eps)
}

/// Per-element diagonal Gaussian KL written so that `q == p` gives exactly zero.
#[inline]
pub(crate) fn kl_elem<T: Scalar>(qm: T, ql: T, pm: T, pl: T) -> T {
    let two = T::lit(2.0);
    let half = T::lit(0.5);
    let d = qm - pm;
    (pl - ql) + half * ((two * (ql - pl)).exp() + d * d * (-two * pl).exp()) - half
}
