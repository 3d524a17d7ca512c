//! Minimal reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] is an append-only tape: every primitive pushes one node whose
//! inputs are strictly earlier nodes, so insertion order is a topological
//! order and [`Graph::backward`] is a single reverse sweep. Only the
//! primitives the encoder-decoder stages need are provided.
//!
//! Constants (images, targets, contribution maps) enter through
//! [`Graph::constant`] or as plain tensors captured by
//! [`Graph::weighted_sse`]; neither ever receives a gradient.

mod kernels;

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resample {
    MaxPool2,
    Upsample2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv3x3 { input: Var, kernel: Var, bias: Var },
    MaxPool2 { input: Var, argmax: Vec<usize> },
    Upsample2 { input: Var },
    Relu { input: Var },
    Sigmoid { input: Var },
    /// `mask` holds 0 or `1 / (1 - rate)` per element.
    Dropout { input: Var, mask: Vec<f64> },
    Concat { a: Var, b: Var },
    WeightedSse { pred: Var, target: Tensor, contrib: Tensor },
    Sum { input: Var },
    Combine { terms: Vec<(Var, f64)> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only computation tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node that required them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
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

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A trainable leaf; receives a gradient.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A constant leaf; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copies the value of `v` into a new constant leaf, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.needs(v)
    }

    /// 3x3 cross-correlation, zero padding 1, plus per-channel bias.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (c, h, w) = self.value(input).chw()?;
        let ks = self.value(kernel).shape();
        let [k, kc, 3, 3] = ks[..] else {
            return Err(invalid!("conv kernel must be [K, C, 3, 3], got {:?}", ks));
        };
        if kc != c {
            return Err(invalid!("conv kernel expects {} input channels, input has {}", kc, c));
        }
        if self.value(bias).shape() != [k] {
            return Err(invalid!(
                "conv bias must be [{}], got {:?}",
                k,
                self.value(bias).shape()
            ));
        }
        let mut out = Tensor::zeros(&[k, h, w]);
        kernels::conv3x3_forward(
            self.value(input).data(),
            (c, h, w),
            self.value(kernel).data(),
            self.value(bias).data(),
            out.data_mut(),
        );
        let rg = self.needs(input) || self.needs(kernel) || self.needs(bias);
        Ok(self.push(out, Op::Conv3x3 { input, kernel, bias }, rg))
    }

    pub fn resample(&mut self, input: Var, mode: Resample) -> Result<Var> {
        match mode {
            Resample::MaxPool2 => self.maxpool2(input),
            Resample::Upsample2 => self.upsample2(input),
        }
    }

    /// 2x2 max pooling, stride 2. Ties go to the first maximum in row-major order.
    pub fn maxpool2(&mut self, input: Var) -> Result<Var> {
        let (c, h, w) = self.value(input).chw()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(invalid!("maxpool2 needs even spatial dims, got {}x{}", h, w));
        }
        let (oh, ow) = (h / 2, w / 2);
        let src = self.value(input).data();
        let mut out = Vec::with_capacity(c * oh * ow);
        let mut argmax = Vec::with_capacity(c * oh * ow);
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let base = ci * h * w + 2 * oy * w + 2 * ox;
                    let mut best = base;
                    for cand in [base + 1, base + w, base + w + 1] {
                        if src[cand] > src[best] {
                            best = cand;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        let out = Tensor::from_vec(&[c, oh, ow], out)?;
        let rg = self.needs(input);
        Ok(self.push(out, Op::MaxPool2 { input, argmax }, rg))
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&mut self, input: Var) -> Result<Var> {
        let (c, h, w) = self.value(input).chw()?;
        let (oh, ow) = (2 * h, 2 * w);
        let src = self.value(input).data();
        let mut out = vec![0.0; c * oh * ow];
        for ci in 0..c {
            for oy in 0..oh {
                let srow = &src[ci * h * w + (oy / 2) * w..][..w];
                let orow = &mut out[ci * oh * ow + oy * ow..][..ow];
                for (ox, o) in orow.iter_mut().enumerate() {
                    *o = srow[ox / 2];
                }
            }
        }
        let out = Tensor::from_vec(&[c, oh, ow], out)?;
        let rg = self.needs(input);
        Ok(self.push(out, Op::Upsample2 { input }, rg))
    }

    pub fn activate(&mut self, input: Var, kind: Activation) -> Var {
        match kind {
            Activation::Relu => self.relu(input),
            Activation::Sigmoid => self.sigmoid(input),
        }
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let out = Tensor::from_vec(x.shape(), x.data().iter().map(|&v| v.max(0.0)).collect())
            .expect("same shape");
        let rg = self.needs(input);
        self.push(out, Op::Relu { input }, rg)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let out = Tensor::from_vec(x.shape(), x.data().iter().map(|&v| sigmoid(v)).collect())
            .expect("same shape");
        let rg = self.needs(input);
        self.push(out, Op::Sigmoid { input }, rg)
    }

    /// Inverted dropout. Identity when `training` is false or `rate` is 0;
    /// the generator is only consumed when a mask is actually drawn.
    pub fn dropout<R: rand::RngCore + ?Sized>(
        &mut self,
        input: Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(invalid!("dropout rate must lie in [0, 1), got {}", rate));
        }
        if !training || rate == 0.0 {
            return Ok(input);
        }
        let scale = 1.0 / (1.0 - rate);
        let x = self.value(input);
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { scale })
            .collect();
        let out = Tensor::from_vec(
            x.shape(),
            x.data().iter().zip(&mask).map(|(v, m)| v * m).collect(),
        )?;
        let rg = self.needs(input);
        Ok(self.push(out, Op::Dropout { input, mask }, rg))
    }

    /// Channel-wise concatenation, `a` first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ca, ha, wa) = self.value(a).chw()?;
        let (cb, hb, wb) = self.value(b).chw()?;
        if (ha, wa) != (hb, wb) {
            return Err(invalid!(
                "concat needs equal spatial dims, got {}x{} and {}x{}",
                ha,
                wa,
                hb,
                wb
            ));
        }
        let mut data = Vec::with_capacity((ca + cb) * ha * wa);
        data.extend_from_slice(self.value(a).data());
        data.extend_from_slice(self.value(b).data());
        let out = Tensor::from_vec(&[ca + cb, ha, wa], data)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Concat { a, b }, rg))
    }

    /// `sum_p contrib(p) * (target(p) - pred(p))^2`, differentiable in `pred` only.
    pub fn weighted_sse(&mut self, pred: Var, target: &Tensor, contrib: &Tensor) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() || p.shape() != contrib.shape() {
            return Err(invalid!(
                "weighted_sse shapes differ: pred {:?}, target {:?}, contrib {:?}",
                p.shape(),
                target.shape(),
                contrib.shape()
            ));
        }
        let mut loss = 0.0;
        for ((&yh, &y), &c) in p.data().iter().zip(target.data()).zip(contrib.data()) {
            let d = y - yh;
            loss += c * d * d;
        }
        let rg = self.needs(pred);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::WeightedSse {
                pred,
                target: target.clone(),
                contrib: contrib.clone(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).sum();
        let rg = self.needs(input);
        self.push(Tensor::scalar(s), Op::Sum { input }, rg)
    }

    /// `sum_i w_i * x_i` over same-shaped nodes.
    pub fn combine(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let Some(&(first, _)) = terms.first() else {
            return Err(invalid!("combine needs at least one term"));
        };
        let shape = self.value(first).shape().to_vec();
        let mut out = Tensor::zeros(&shape);
        for &(v, wt) in terms {
            let x = self.value(v);
            if x.shape() != shape.as_slice() {
                return Err(invalid!("combine shapes differ: {:?} vs {:?}", x.shape(), shape));
            }
            for (o, xv) in out.data_mut().iter_mut().zip(x.data()) {
                *o += wt * xv;
            }
        }
        let rg = terms.iter().any(|&(v, _)| self.needs(v));
        Ok(self.push(
            out,
            Op::Combine {
                terms: terms.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar node. Every node that requires a gradient
    /// and lies on a path to `loss` gets an entry; constants never do.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if !root.value.is_scalar() {
            return Err(invalid!(
                "backward needs a scalar, got shape {:?}",
                root.value.shape()
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !root.requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::full(root.value.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Conv3x3 { input, kernel, bias } => {
                    let x = self.value(*input);
                    let (c, h, w) = x.chw()?;
                    let kt = self.value(*kernel);
                    let k = kt.shape()[0];
                    let mut gi = self.needs(*input).then(|| Tensor::zeros(x.shape()));
                    let mut gk = self.needs(*kernel).then(|| Tensor::zeros(kt.shape()));
                    let mut gb = self.needs(*bias).then(|| Tensor::zeros(&[k]));
                    kernels::conv3x3_backward(
                        x.data(),
                        (c, h, w),
                        kt.data(),
                        k,
                        g.data(),
                        gi.as_mut().map(|t| t.data_mut()),
                        gk.as_mut().map(|t| t.data_mut()),
                        gb.as_mut().map(|t| t.data_mut()),
                    );
                    accumulate(&mut grads, *input, gi);
                    accumulate(&mut grads, *kernel, gk);
                    accumulate(&mut grads, *bias, gb);
                }
                Op::MaxPool2 { input, argmax } => {
                    let mut gi = Tensor::zeros(self.value(*input).shape());
                    for (&src, &gv) in argmax.iter().zip(g.data()) {
                        gi.data_mut()[src] += gv;
                    }
                    accumulate(&mut grads, *input, Some(gi));
                }
                Op::Upsample2 { input } => {
                    let (c, h, w) = self.value(*input).chw()?;
                    let ow = 2 * w;
                    let mut gi = Tensor::zeros(&[c, h, w]);
                    let gd = g.data();
                    let out = gi.data_mut();
                    for ci in 0..c {
                        for oy in 0..2 * h {
                            let grow = &gd[ci * 4 * h * w + oy * ow..][..ow];
                            let irow = &mut out[ci * h * w + (oy / 2) * w..][..w];
                            for (ox, gv) in grow.iter().enumerate() {
                                irow[ox / 2] += gv;
                            }
                        }
                    }
                    accumulate(&mut grads, *input, Some(gi));
                }
                Op::Relu { input } => {
                    let x = self.value(*input);
                    let gi: Vec<f64> = x
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&xv, &gv)| if xv > 0.0 { gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *input, Some(Tensor::from_vec(x.shape(), gi)?));
                }
                Op::Sigmoid { input } => {
                    let y = &node.value;
                    let gi: Vec<f64> = y
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&yv, &gv)| gv * yv * (1.0 - yv))
                        .collect();
                    accumulate(&mut grads, *input, Some(Tensor::from_vec(y.shape(), gi)?));
                }
                Op::Dropout { input, mask } => {
                    let gi: Vec<f64> = g.data().iter().zip(mask).map(|(gv, m)| gv * m).collect();
                    accumulate(&mut grads, *input, Some(Tensor::from_vec(g.shape(), gi)?));
                }
                Op::Concat { a, b } => {
                    let na = self.value(*a).len();
                    let ga = Tensor::from_vec(self.value(*a).shape(), g.data()[..na].to_vec())?;
                    let gb = Tensor::from_vec(self.value(*b).shape(), g.data()[na..].to_vec())?;
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, Some(ga));
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, Some(gb));
                    }
                }
                Op::WeightedSse {
                    pred,
                    target,
                    contrib,
                } => {
                    let up = g.data()[0];
                    let p = self.value(*pred);
                    let gi: Vec<f64> = p
                        .data()
                        .iter()
                        .zip(target.data())
                        .zip(contrib.data())
                        .map(|((&yh, &y), &c)| -2.0 * c * (y - yh) * up)
                        .collect();
                    accumulate(&mut grads, *pred, Some(Tensor::from_vec(p.shape(), gi)?));
                }
                Op::Sum { input } => {
                    let shape = self.value(*input).shape();
                    accumulate(&mut grads, *input, Some(Tensor::full(shape, g.data()[0])));
                }
                Op::Combine { terms } => {
                    for &(v, wt) in terms.iter().filter(|(v, _)| self.needs(*v)) {
                        let gi: Vec<f64> = g.data().iter().map(|gv| wt * gv).collect();
                        accumulate(&mut grads, v, Some(Tensor::from_vec(g.shape(), gi)?));
                    }
                }
            }
            grads[i] = Some(g);
        }
        // Intermediate nodes keep their gradients too; callers look up leaves.
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.requires_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Option<Tensor>) {
    let Some(g) = g else { return };
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}
