//! Reverse-mode differentiation over a linear record of executed operations.
//!
//! Every op computes its value eagerly and appends a node. [`Tape::backward`]
//! walks the nodes from the loss back to the first one, so operations are
//! revisited in exactly the reverse of their execution order. Nodes that do
//! not depend on any trainable parameter are skipped entirely.

use std::collections::HashMap;

use rand::Rng;

use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBroadcast(Var, Var),
    Hadamard(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Scale(Var, T),
    Sum(Var),
    Dropout(Var, Vec<T>),
    SoftmaxCrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<T>,
    },
    SigmoidCrossEntropy {
        logits: Var,
        label: usize,
    },
    WeightedSum {
        weights: Var,
        items: Vec<Var>,
    },
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        spec: ConvSpec,
    },
    GlobalAvgPool(Var),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddBroadcast(..) => "add_broadcast",
            Op::Hadamard(..) => "hadamard",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::Dropout(..) => "dropout",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::SigmoidCrossEntropy { .. } => "sigmoid_cross_entropy",
            Op::WeightedSum { .. } => "weighted_sum",
            Op::Conv2d { .. } => "conv2d",
            Op::GlobalAvgPool(_) => "global_avg_pool",
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Record of executed differentiable operations.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    /// Parameter leaves keyed by (store uid, id).
    params: HashMap<(u64, ParamId), Var>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Operation names in execution order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op.name()).collect()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Leaf, false)
    }

    /// Records a parameter leaf. Repeated calls for the same id return the same
    /// variable, so gradients from every use accumulate on one node.
    ///
    /// The value is read from `store` on first use; later changes to the store
    /// are not seen by this tape.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let key = (store.uid(), id);
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        let p = store.get(id);
        self.nodes.push(Node {
            value: p.value.clone(),
            op: Op::Param,
            needs_grad: p.trainable,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(key, v);
        v
    }

    /// `a[r×k] · b[k×c] → [r×c]`; a rank-1 `b` of extent k yields a rank-1 result.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() != 2 || sb.len() > 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (r, k) = (sa[0], sa[1]);
        let c = if sb.len() == 2 { sb[1] } else { 1 };
        let (ad, bd) = (av.data(), bv.data());
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let row = &ad[i * k..(i + 1) * k];
            let dst = &mut out[i * c..(i + 1) * c];
            for (j, &aij) in row.iter().enumerate() {
                let brow = &bd[j * c..(j + 1) * c];
                for (o, &bv) in dst.iter_mut().zip(brow) {
                    *o = *o + aij * bv;
                }
            }
        }
        let shape = if sb.len() == 2 { vec![r, c] } else { vec![r] };
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::new(shape, out)?, Op::MatMul(a, b), needs)
    }

    /// Elementwise sum of equal shapes, or a rank-2 `a` plus a vector `b`
    /// broadcast across the leading extent.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let needs = self.needs(a) || self.needs(b);
        if av.shape() == bv.shape() {
            let out: Vec<T> = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
            let shape = av.shape().to_vec();
            return self.push(Tensor::new(shape, out)?, Op::Add(a, b), needs);
        }
        if av.rank() == 2 && bv.rank() == 1 && av.shape()[1] == bv.shape()[0] {
            let c = bv.len();
            let bd = bv.data();
            let out: Vec<T> = av
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| x + bd[i % c])
                .collect();
            let shape = av.shape().to_vec();
            return self.push(Tensor::new(shape, out)?, Op::AddBroadcast(a, b), needs);
        }
        Err(Error::dim("add", av.shape(), bv.shape()))
    }

    /// Elementwise product of equal shapes.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::dim("hadamard", av.shape(), bv.shape()));
        }
        let out: Vec<T> = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        let shape = av.shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::new(shape, out)?, Op::Hadamard(a, b), needs)
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let xv = self.value(x);
        let out: Vec<T> = xv.data().iter().map(|&v| f(v)).collect();
        let shape = xv.shape().to_vec();
        let needs = self.needs(x);
        self.push(Tensor::new(shape, out)?, op, needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| v.tanh(), Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| v.max(T::zero()), Op::Relu(x))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        self.unary(x, |v| v * factor, Op::Scale(x, factor))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: T = self.value(x).data().iter().copied().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), needs)
    }

    /// Inverted dropout. Identity (no new node) when `rng` is `None` or `rate` is 0.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        rng: Option<&mut R>,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::contract(format!("dropout rate {rate} outside [0, 1)")));
        }
        let Some(rng) = rng else { return Ok(x) };
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = T::from_f64(1.0 / (1.0 - rate));
        let xv = self.value(x);
        let mask: Vec<T> = (0..xv.len())
            .map(|_| {
                if rng.random::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let out: Vec<T> = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let shape = xv.shape().to_vec();
        let needs = self.needs(x);
        self.push(Tensor::new(shape, out)?, Op::Dropout(x, mask), needs)
    }

    /// `-log softmax(logits)[label]`, computed with max subtraction.
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let z = self.value(logits);
        if z.rank() != 1 {
            return Err(Error::dim("softmax_cross_entropy", z.shape(), &[]));
        }
        if label >= z.len() {
            return Err(Error::Label {
                label,
                classes: z.len(),
            });
        }
        let probs = softmax(z.data());
        // log-sum-exp about the arg-max, whose own term is exactly 1
        let (top, max) = z
            .data()
            .iter()
            .copied()
            .enumerate()
            .fold((0, T::neg_infinity()), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
        let rest: T = z
            .data()
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != top)
            .map(|(_, &v)| (v - max).exp())
            .sum();
        let loss = rest.ln_1p() - (z.data()[label] - max);
        let needs = self.needs(logits);
        self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            },
            needs,
        )
    }

    /// Sum over classes of binary cross-entropy between `sigmoid(logits)` and
    /// the one-hot encoding of `label`.
    pub fn sigmoid_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let z = self.value(logits);
        if z.rank() != 1 {
            return Err(Error::dim("sigmoid_cross_entropy", z.shape(), &[]));
        }
        if label >= z.len() {
            return Err(Error::Label {
                label,
                classes: z.len(),
            });
        }
        let loss: T = z
            .data()
            .iter()
            .enumerate()
            .map(|(j, &v)| {
                let softplus = v.max(T::zero()) + (-v.abs()).exp().ln_1p();
                if j == label {
                    softplus - v
                } else {
                    softplus
                }
            })
            .sum();
        let needs = self.needs(logits);
        self.push(
            Tensor::scalar(loss),
            Op::SigmoidCrossEntropy { logits, label },
            needs,
        )
    }

    /// `Σ_n weights[n] · items[n]` for a weight vector and equally shaped items.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Result<Var> {
        let w = self.value(weights);
        if w.rank() != 1 || w.len() != items.len() || items.is_empty() {
            return Err(Error::dim("weighted_sum", w.shape(), &[items.len()]));
        }
        let shape = self.value(items[0]).shape().to_vec();
        let mut out = vec![T::zero(); self.value(items[0]).len()];
        for (&wn, &item) in w.data().iter().zip(items) {
            let iv = self.value(item);
            if iv.shape() != shape.as_slice() {
                return Err(Error::dim("weighted_sum", &shape, iv.shape()));
            }
            for (o, &v) in out.iter_mut().zip(iv.data()) {
                *o = *o + wn * v;
            }
        }
        let needs = self.needs(weights) || items.iter().any(|&v| self.needs(v));
        self.push(
            Tensor::new(shape, out)?,
            Op::WeightedSum {
                weights,
                items: items.to_vec(),
            },
            needs,
        )
    }

    /// 2-D convolution of `input[C×H×W]` with `weight[O×C×k×k]` plus `bias[O]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, spec: ConvSpec) -> Result<Var> {
        let (xv, wv, bv) = (self.value(input), self.value(weight), self.value(bias));
        let (xs, ws) = (xv.shape(), wv.shape());
        if xs.len() != 3 || ws.len() != 4 || ws[1] != xs[0] || ws[2] != ws[3] {
            return Err(Error::dim("conv2d", xs, ws));
        }
        if bv.shape() != [ws[0]] {
            return Err(Error::dim("conv2d", ws, bv.shape()));
        }
        let geo = ConvGeometry::new(xs, ws, spec)?;
        let mut out = vec![T::zero(); geo.out_c * geo.out_h * geo.out_w];
        let (xd, wd, bd) = (xv.data(), wv.data(), bv.data());
        for o in 0..geo.out_c {
            for oy in 0..geo.out_h {
                for ox in 0..geo.out_w {
                    let mut acc = bd[o];
                    geo.for_each_tap(o, oy, ox, |xi, wi| acc = acc + xd[xi] * wd[wi]);
                    out[(o * geo.out_h + oy) * geo.out_w + ox] = acc;
                }
            }
        }
        let shape = vec![geo.out_c, geo.out_h, geo.out_w];
        let needs = self.needs(input) || self.needs(weight) || self.needs(bias);
        self.push(
            Tensor::new(shape, out)?,
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
            },
            needs,
        )
    }

    /// Mean over the spatial extents of a `C×H×W` tensor, giving a vector of extent C.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 3 {
            return Err(Error::dim("global_avg_pool", xv.shape(), &[]));
        }
        let (c, hw) = (xv.shape()[0], xv.shape()[1] * xv.shape()[2]);
        let count = T::from_f64(hw as f64);
        let out: Vec<T> = xv
            .data()
            .chunks(hw)
            .map(|plane| plane.iter().copied().sum::<T>() / count)
            .collect();
        debug_assert_eq!(out.len(), c);
        let needs = self.needs(x);
        self.push(Tensor::vector(out), Op::GlobalAvgPool(x), needs)
    }

    /// Gradient of a scalar `loss` with respect to every node.
    fn adjoints(&self, loss: Var, mut visit: impl FnMut(usize)) -> Result<Vec<Option<Vec<T>>>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            visit(idx);
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(grads)
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (r, k) = (av.shape()[0], av.shape()[1]);
                let c = if bv.rank() == 2 { bv.shape()[1] } else { 1 };
                let (ad, bd) = (av.data(), bv.data());
                if self.needs(*a) {
                    let ga = slot(grads, *a, r * k);
                    for i in 0..r {
                        let gi = &g[i * c..(i + 1) * c];
                        for j in 0..k {
                            let brow = &bd[j * c..(j + 1) * c];
                            let mut acc = T::zero();
                            for (&x, &y) in gi.iter().zip(brow) {
                                acc = acc + x * y;
                            }
                            ga[i * k + j] = ga[i * k + j] + acc;
                        }
                    }
                }
                if self.needs(*b) {
                    let gb = slot(grads, *b, k * c);
                    for i in 0..r {
                        let gi = &g[i * c..(i + 1) * c];
                        for j in 0..k {
                            let aij = ad[i * k + j];
                            let dst = &mut gb[j * c..(j + 1) * c];
                            for (d, &x) in dst.iter_mut().zip(gi) {
                                *d = *d + aij * x;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.needs(v) {
                        add_into(slot(grads, v, g.len()), g);
                    }
                }
            }
            Op::AddBroadcast(a, b) => {
                if self.needs(*a) {
                    add_into(slot(grads, *a, g.len()), g);
                }
                if self.needs(*b) {
                    let c = self.value(*b).len();
                    let gb = slot(grads, *b, c);
                    for (i, &x) in g.iter().enumerate() {
                        gb[i % c] = gb[i % c] + x;
                    }
                }
            }
            Op::Hadamard(a, b) => {
                for (this, other) in [(*a, *b), (*b, *a)] {
                    if self.needs(this) {
                        let od = self.value(other).data();
                        let dst = slot(grads, this, g.len());
                        for ((d, &x), &o) in dst.iter_mut().zip(g).zip(od) {
                            *d = *d + x * o;
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                let s = node.value.data();
                let dst = slot(grads, *x, g.len());
                for ((d, &gi), &si) in dst.iter_mut().zip(g).zip(s) {
                    *d = *d + gi * si * (T::one() - si);
                }
            }
            Op::Tanh(x) => {
                let t = node.value.data();
                let dst = slot(grads, *x, g.len());
                for ((d, &gi), &ti) in dst.iter_mut().zip(g).zip(t) {
                    *d = *d + gi * (T::one() - ti * ti);
                }
            }
            Op::Relu(x) => {
                let xd = self.value(*x).data();
                let dst = slot(grads, *x, g.len());
                for ((d, &gi), &xi) in dst.iter_mut().zip(g).zip(xd) {
                    if xi > T::zero() {
                        *d = *d + gi;
                    }
                }
            }
            Op::Scale(x, factor) => {
                let dst = slot(grads, *x, g.len());
                for (d, &gi) in dst.iter_mut().zip(g) {
                    *d = *d + gi * *factor;
                }
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                let dst = slot(grads, *x, n);
                for d in dst.iter_mut() {
                    *d = *d + g[0];
                }
            }
            Op::Dropout(x, mask) => {
                let dst = slot(grads, *x, g.len());
                for ((d, &gi), &m) in dst.iter_mut().zip(g).zip(mask) {
                    *d = *d + gi * m;
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            } => {
                let dst = slot(grads, *logits, probs.len());
                for (j, (d, &p)) in dst.iter_mut().zip(probs).enumerate() {
                    let target = if j == *label { T::one() } else { T::zero() };
                    *d = *d + g[0] * (p - target);
                }
            }
            Op::SigmoidCrossEntropy { logits, label } => {
                let z = self.value(*logits).data();
                let dst = slot(grads, *logits, z.len());
                for (j, (d, &zj)) in dst.iter_mut().zip(z).enumerate() {
                    let target = if j == *label { T::one() } else { T::zero() };
                    *d = *d + g[0] * (sigmoid(zj) - target);
                }
            }
            Op::WeightedSum { weights, items } => {
                let wd = self.value(*weights).data().to_vec();
                if self.needs(*weights) {
                    let dots: Vec<T> = items
                        .iter()
                        .map(|&it| {
                            self.value(it)
                                .data()
                                .iter()
                                .zip(g)
                                .map(|(&v, &gi)| v * gi)
                                .sum()
                        })
                        .collect();
                    let gw = slot(grads, *weights, wd.len());
                    for (d, dot) in gw.iter_mut().zip(dots) {
                        *d = *d + dot;
                    }
                }
                for (&item, &wn) in items.iter().zip(&wd) {
                    if self.needs(item) {
                        let dst = slot(grads, item, g.len());
                        for (d, &gi) in dst.iter_mut().zip(g) {
                            *d = *d + wn * gi;
                        }
                    }
                }
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
            } => {
                let (xv, wv) = (self.value(*input), self.value(*weight));
                let geo = ConvGeometry::new(xv.shape(), wv.shape(), *spec)
                    .expect("geometry validated in forward");
                let plane = geo.out_h * geo.out_w;
                if self.needs(*bias) {
                    let gb = slot(grads, *bias, geo.out_c);
                    for (o, d) in gb.iter_mut().enumerate() {
                        *d = *d + g[o * plane..(o + 1) * plane].iter().copied().sum();
                    }
                }
                let (xd, wd) = (xv.data(), wv.data());
                if self.needs(*weight) {
                    let gw = slot(grads, *weight, wd.len());
                    for o in 0..geo.out_c {
                        for oy in 0..geo.out_h {
                            for ox in 0..geo.out_w {
                                let go = g[(o * geo.out_h + oy) * geo.out_w + ox];
                                geo.for_each_tap(o, oy, ox, |xi, wi| gw[wi] = gw[wi] + go * xd[xi]);
                            }
                        }
                    }
                }
                if self.needs(*input) {
                    let gx = slot(grads, *input, xd.len());
                    for o in 0..geo.out_c {
                        for oy in 0..geo.out_h {
                            for ox in 0..geo.out_w {
                                let go = g[(o * geo.out_h + oy) * geo.out_w + ox];
                                geo.for_each_tap(o, oy, ox, |xi, wi| gx[xi] = gx[xi] + go * wd[wi]);
                            }
                        }
                    }
                }
            }
            Op::GlobalAvgPool(x) => {
                let xs = self.value(*x).shape();
                let hw = xs[1] * xs[2];
                let inv = T::from_f64(1.0 / hw as f64);
                let dst = slot(grads, *x, xs[0] * hw);
                for (c, &gc) in g.iter().enumerate() {
                    for d in &mut dst[c * hw..(c + 1) * hw] {
                        *d = *d + gc * inv;
                    }
                }
            }
        }
    }

    /// Accumulates d(loss)/d(param) into every trainable parameter reachable
    /// from `loss`. Gradients add to whatever is already stored.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.adjoints(loss, |_| {})?;
        for (&(uid, id), &var) in &self.params {
            if uid != store.uid() || var.0 > loss.0 || !self.nodes[var.0].needs_grad {
                continue;
            }
            if let Some(g) = &grads[var.0] {
                let p = store.get_mut(id);
                for (d, &v) in p.grad.data_mut().iter_mut().zip(g) {
                    *d = *d + v;
                }
            }
        }
        Ok(())
    }

    /// Node indices in the order backward visits them.
    pub fn backward_visit_order(&self, loss: Var) -> Result<Vec<usize>> {
        let mut order = Vec::new();
        self.adjoints(loss, |i| order.push(i))?;
        Ok(order)
    }

    /// Gradient of `loss` with respect to an arbitrary recorded variable that
    /// depends on trainable parameters. Returns zeros for unreachable ones.
    pub fn grad_of(&self, loss: Var, wrt: Var) -> Result<Tensor<T>> {
        let grads = self.adjoints(loss, |_| {})?;
        let shape = self.shape(wrt).to_vec();
        match grads.get(wrt.0).and_then(|g| g.clone()) {
            Some(g) => Tensor::new(shape, g),
            None => Ok(Tensor::zeros(&shape)),
        }
    }
}

pub(crate) fn softmax<T: Real>(z: &[T]) -> Vec<T> {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn slot<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

struct ConvGeometry {
    in_c: usize,
    in_h: usize,
    in_w: usize,
    k: usize,
    out_c: usize,
    out_h: usize,
    out_w: usize,
    spec: ConvSpec,
}

impl ConvGeometry {
    fn new(xs: &[usize], ws: &[usize], spec: ConvSpec) -> Result<Self> {
        let (in_c, in_h, in_w) = (xs[0], xs[1], xs[2]);
        let k = ws[2];
        if spec.stride == 0 || in_h + 2 * spec.padding < k || in_w + 2 * spec.padding < k {
            return Err(Error::dim("conv2d", xs, ws));
        }
        Ok(Self {
            in_c,
            in_h,
            in_w,
            k,
            out_c: ws[0],
            out_h: (in_h + 2 * spec.padding - k) / spec.stride + 1,
            out_w: (in_w + 2 * spec.padding - k) / spec.stride + 1,
            spec,
        })
    }

    /// Calls `f(input_index, weight_index)` for every in-bounds tap of output (o, oy, ox).
    #[inline]
    fn for_each_tap(&self, o: usize, oy: usize, ox: usize, mut f: impl FnMut(usize, usize)) {
        let pad = self.spec.padding as isize;
        let y0 = (oy * self.spec.stride) as isize - pad;
        let x0 = (ox * self.spec.stride) as isize - pad;
        for c in 0..self.in_c {
            for ky in 0..self.k {
                let y = y0 + ky as isize;
                if y < 0 || y >= self.in_h as isize {
                    continue;
                }
                for kx in 0..self.k {
                    let x = x0 + kx as isize;
                    if x < 0 || x >= self.in_w as isize {
                        continue;
                    }
                    let xi = (c * self.in_h + y as usize) * self.in_w + x as usize;
                    let wi = ((o * self.in_c + c) * self.k + ky) * self.k + kx;
                    f(xi, wi);
                }
            }
        }
    }
}
