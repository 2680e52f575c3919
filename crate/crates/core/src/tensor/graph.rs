//! Eager-evaluation autograd tape.
//!
//! Ops execute immediately when recorded and append a node holding the
//! result plus enough information to run the chain rule backwards. A graph
//! is consumed by its single `backward` call; reusing it is an error, which
//! keeps accidental gradient double-accumulation unrepresentable.

use super::kernels;
use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) u32);

enum Op {
    Leaf,
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Scale(u32, f64),
    Sum(u32),
    MeanScale(u32, f64), // Sum already applied; kept for clarity of intent
    Relu(u32),
    Tanh(u32),
    Conv2d { x: u32, w: u32, b: u32, stride: usize, pad: usize },
    ConvT2d { x: u32, w: u32, b: u32, stride: usize, pad: usize },
    MaxPool2 { x: u32, argmax: Vec<u8> },
    ConcatC { parts: Vec<u32> },
    NarrowC { x: u32, start: usize, len: usize },
}

struct Node<T: Element> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    requires_grad: bool,
    op: Op,
}

pub struct Graph<T: Element> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op) -> Result<Var> {
        if self.nodes.len() >= u32::MAX as usize {
            return Err(Error::Graph("graph node limit exceeded".into()));
        }
        self.nodes.push(Node { value, grad: None, requires_grad, op });
        Ok(Var((self.nodes.len() - 1) as u32))
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0 as usize]
    }

    fn req(&self, i: u32) -> bool {
        self.nodes[i as usize].requires_grad
    }

    /// Records an input tensor. `requires_grad` marks it as a differentiation
    /// target for the eventual `backward` pass.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// A non-differentiated constant leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.node(v).value
    }

    /// Gradient of the backward root w.r.t. `v`, if backward has run and the
    /// node required gradients.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.node(v).grad.as_ref()
    }

    fn binary_same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (da, db) = (self.value(a).dims(), self.value(b).dims());
        if da != db {
            return Err(Error::Shape(format!("{what}: {da:?} vs {db:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "add")?;
        let v = Tensor::from_fn(self.value(a).dims(), |i| {
            self.value(a).data()[i] + self.value(b).data()[i]
        });
        self.push(v, self.req(a.0) || self.req(b.0), Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "sub")?;
        let v = Tensor::from_fn(self.value(a).dims(), |i| {
            self.value(a).data()[i] - self.value(b).data()[i]
        });
        self.push(v, self.req(a.0) || self.req(b.0), Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "mul")?;
        let v = Tensor::from_fn(self.value(a).dims(), |i| {
            self.value(a).data()[i] * self.value(b).data()[i]
        });
        self.push(v, self.req(a.0) || self.req(b.0), Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let cv = T::from64(c);
        let v = self.value(a).map(|x| x * cv);
        self.push(v, self.req(a.0), Op::Scale(a.0, c))
    }

    /// Sum of all elements, as a shape-[1] scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let mut s = T::zero();
        for &v in self.value(a).data() {
            s += v;
        }
        self.push(Tensor::scalar(s), self.req(a.0), Op::Sum(a.0))
    }

    /// Mean of all elements, as a shape-[1] scalar.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel() as f64;
        let mut s = T::zero();
        for &v in self.value(a).data() {
            s += v;
        }
        let m = s * T::from64(1.0 / n);
        self.push(Tensor::scalar(m), self.req(a.0), Op::MeanScale(a.0, 1.0 / n))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(v, self.req(a.0), Op::Relu(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.tanh());
        self.push(v, self.req(a.0), Op::Tanh(a.0))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let v = kernels::conv2d_fwd(self.value(x), self.value(w), self.value(b), stride, pad)?;
        let rg = self.req(x.0) || self.req(w.0) || self.req(b.0);
        self.push(v, rg, Op::Conv2d { x: x.0, w: w.0, b: b.0, stride, pad })
    }

    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let v = kernels::convt2d_fwd(self.value(x), self.value(w), self.value(b), stride, pad)?;
        let rg = self.req(x.0) || self.req(w.0) || self.req(b.0);
        self.push(v, rg, Op::ConvT2d { x: x.0, w: w.0, b: b.0, stride, pad })
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let (v, argmax) = kernels::maxpool2_fwd(self.value(x))?;
        self.push(v, self.req(x.0), Op::MaxPool2 { x: x.0, argmax })
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Shape("concat_channels of zero parts".into()));
        }
        let (b0, _, h0, w0) = self.value(parts[0]).dims4()?;
        let mut c_total = 0;
        for &p in parts {
            let (b, c, h, w) = self.value(p).dims4()?;
            if (b, h, w) != (b0, h0, w0) {
                return Err(Error::Shape(format!(
                    "concat_channels: part dims {:?} incompatible with {:?}",
                    self.value(p).dims(),
                    self.value(parts[0]).dims()
                )));
            }
            c_total += c;
        }
        let mut out = Tensor::zeros(&[b0, c_total, h0, w0]);
        {
            let od = out.data_mut();
            let plane = h0 * w0;
            for bi in 0..b0 {
                let mut at = 0;
                for &p in parts {
                    let t = self.value(p);
                    let c = t.dims()[1];
                    let src = &t.data()[bi * c * plane..(bi + 1) * c * plane];
                    od[(bi * c_total + at) * plane..(bi * c_total + at + c) * plane]
                        .copy_from_slice(src);
                    at += c;
                }
            }
        }
        let rg = parts.iter().any(|&p| self.req(p.0));
        self.push(out, rg, Op::ConcatC { parts: parts.iter().map(|p| p.0).collect() })
    }

    /// Channel slice [start, start+len) of a 4-d tensor.
    pub fn narrow_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4()?;
        if len == 0 || start + len > c {
            return Err(Error::Shape(format!(
                "narrow_channels [{start}, {}) of {c} channels",
                start + len
            )));
        }
        let plane = h * w;
        let xd = self.value(x).data();
        let mut out = Tensor::zeros(&[b, len, h, w]);
        {
            let od = out.data_mut();
            for bi in 0..b {
                od[bi * len * plane..(bi + 1) * len * plane].copy_from_slice(
                    &xd[(bi * c + start) * plane..(bi * c + start + len) * plane],
                );
            }
        }
        let rg = self.req(x.0);
        self.push(out, rg, Op::NarrowC { x: x.0, start, len })
    }

    /// Splits into channel blocks of the given sizes; exact left inverse of
    /// `concat_channels`.
    pub fn split_channels(&mut self, x: Var, sizes: &[usize]) -> Result<Vec<Var>> {
        let (_, c, _, _) = self.value(x).dims4()?;
        let total: usize = sizes.iter().sum();
        if total != c {
            return Err(Error::Shape(format!(
                "split_channels sizes {sizes:?} sum to {total}, tensor has {c} channels"
            )));
        }
        let mut out = Vec::with_capacity(sizes.len());
        let mut at = 0;
        for &s in sizes {
            out.push(self.narrow_channels(x, at, s)?);
            at += s;
        }
        Ok(out)
    }

    /// Reverse-mode sweep from a scalar loss. Populates grads of every
    /// `requires_grad` node that the loss depends on, then marks the graph
    /// consumed: a second call is an error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Graph(
                "backward called twice on the same graph".into(),
            ));
        }
        self.consumed = true;
        let li = loss.0 as usize;
        if self.nodes[li].value.numel() != 1 {
            return Err(Error::Graph(format!(
                "backward root must be scalar, got dims {:?}",
                self.nodes[li].value.dims()
            )));
        }
        if !self.nodes[li].requires_grad {
            return Err(Error::Graph(
                "backward root does not depend on any requires_grad leaf".into(),
            ));
        }

        let mut grads: Vec<Option<Tensor<T>>> = (0..=li).map(|_| None).collect();
        grads[li] = Some(Tensor::scalar(T::one()));

        for i in (0..=li).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue, // not on a path from the loss
            };

            macro_rules! addg {
                ($idx:expr, $delta:expr) => {{
                    let idx = $idx as usize;
                    if self.nodes[idx].requires_grad {
                        let delta = $delta;
                        match &mut grads[idx] {
                            Some(acc) => acc.add_assign(&delta)?,
                            slot @ None => *slot = Some(delta),
                        }
                    }
                }};
            }

            match &self.nodes[i].op {
                Op::Leaf => {}
                &Op::Add(a, b) => {
                    addg!(a, g.clone());
                    addg!(b, g.clone());
                }
                &Op::Sub(a, b) => {
                    addg!(a, g.clone());
                    addg!(b, g.map(|v| -v));
                }
                &Op::Mul(a, b) => {
                    let bv = &self.nodes[b as usize].value;
                    let av = &self.nodes[a as usize].value;
                    addg!(a, Tensor::from_fn(g.dims(), |j| g.data()[j] * bv.data()[j]));
                    addg!(b, Tensor::from_fn(g.dims(), |j| g.data()[j] * av.data()[j]));
                }
                &Op::Scale(a, c) => {
                    let cv = T::from64(c);
                    addg!(a, g.map(|v| v * cv));
                }
                &Op::Sum(a) => {
                    let gv = g.data()[0];
                    let dims = self.nodes[a as usize].value.dims().to_vec();
                    addg!(a, Tensor::full(&dims, gv));
                }
                &Op::MeanScale(a, c) => {
                    let gv = g.data()[0] * T::from64(c);
                    let dims = self.nodes[a as usize].value.dims().to_vec();
                    addg!(a, Tensor::full(&dims, gv));
                }
                &Op::Relu(a) => {
                    let y = &self.nodes[i].value;
                    addg!(
                        a,
                        Tensor::from_fn(g.dims(), |j| {
                            if y.data()[j] > T::zero() {
                                g.data()[j]
                            } else {
                                T::zero()
                            }
                        })
                    );
                }
                &Op::Tanh(a) => {
                    let y = &self.nodes[i].value;
                    addg!(
                        a,
                        Tensor::from_fn(g.dims(), |j| {
                            let t = y.data()[j];
                            g.data()[j] * (T::one() - t * t)
                        })
                    );
                }
                &Op::Conv2d { x, w, b, stride, pad } => {
                    let xv = &self.nodes[x as usize].value;
                    let wv = &self.nodes[w as usize].value;
                    let k = wv.dims()[2];
                    if self.nodes[x as usize].requires_grad {
                        addg!(x, kernels::conv2d_bwd_x(&g, wv, xv.dims(), stride, pad)?);
                    }
                    if self.nodes[w as usize].requires_grad {
                        addg!(w, kernels::conv2d_bwd_w(&g, xv, k, stride, pad)?);
                    }
                    if self.nodes[b as usize].requires_grad {
                        addg!(b, kernels::bias_grad(&g)?);
                    }
                }
                &Op::ConvT2d { x, w, b, stride, pad } => {
                    let xv = &self.nodes[x as usize].value;
                    let wv = &self.nodes[w as usize].value;
                    let k = wv.dims()[2];
                    if self.nodes[x as usize].requires_grad {
                        addg!(x, kernels::convt2d_bwd_x(&g, wv, xv.dims(), stride, pad)?);
                    }
                    if self.nodes[w as usize].requires_grad {
                        addg!(w, kernels::convt2d_bwd_w(&g, xv, k, stride, pad)?);
                    }
                    if self.nodes[b as usize].requires_grad {
                        addg!(b, kernels::bias_grad(&g)?);
                    }
                }
                Op::MaxPool2 { x, argmax } => {
                    let x = *x;
                    let dims = self.nodes[x as usize].value.dims().to_vec();
                    let dx = kernels::maxpool2_bwd(&g, argmax, &dims)?;
                    addg!(x, dx);
                }
                Op::ConcatC { parts } => {
                    let parts = parts.clone();
                    let (b0, _, h0, w0) = g.dims4()?;
                    let plane = h0 * w0;
                    let c_total = g.dims()[1];
                    let mut at = 0;
                    for p in parts {
                        let c = self.nodes[p as usize].value.dims()[1];
                        let start = at;
                        at += c;
                        if !self.nodes[p as usize].requires_grad {
                            continue;
                        }
                        let mut slice = Tensor::zeros(&[b0, c, h0, w0]);
                        {
                            let sd = slice.data_mut();
                            for bi in 0..b0 {
                                sd[bi * c * plane..(bi + 1) * c * plane].copy_from_slice(
                                    &g.data()[(bi * c_total + start) * plane
                                        ..(bi * c_total + start + c) * plane],
                                );
                            }
                        }
                        addg!(p, slice);
                    }
                }
                &Op::NarrowC { x, start, len } => {
                    let dims = self.nodes[x as usize].value.dims().to_vec();
                    let (b0, c, h0, w0) = (dims[0], dims[1], dims[2], dims[3]);
                    let plane = h0 * w0;
                    let mut full = Tensor::zeros(&dims);
                    {
                        let fd = full.data_mut();
                        for bi in 0..b0 {
                            fd[(bi * c + start) * plane..(bi * c + start + len) * plane]
                                .copy_from_slice(
                                    &g.data()[bi * len * plane..(bi + 1) * len * plane],
                                );
                        }
                    }
                    addg!(x, full);
                }
            }

            // Interior grads are no longer needed; keep leaf grads only.
            if !matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = None;
            } else {
                grads[i] = Some(g);
            }
        }

        for (i, slot) in grads.into_iter().enumerate() {
            if let Some(gt) = slot {
                if matches!(self.nodes[i].op, Op::Leaf) {
                    self.nodes[i].grad = Some(gt);
                }
            }
        }
        Ok(())
    }
}
