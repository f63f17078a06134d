//! Reverse-mode differentiation tape.
//!
//! Every operator appends one node holding its output value and the ids of
//! its parents. Nodes are appended after their parents, so a reverse sweep
//! over the node list visits each node after everything that consumes it.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::ops::conv::{self, ConvGeom};
use crate::ops::elementwise::{self as ew, BinaryKind, PadMode, UnaryKind};
use crate::ops::norm::{self, BatchMoments};
use crate::ops::{pool, sample};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Scalar, Shape, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Padding requested by a convolution call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PaddingSpec {
    Zero(usize),
    Reflect(usize),
}

impl Default for PaddingSpec {
    fn default() -> Self {
        PaddingSpec::Zero(0)
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Sample {
        x: Var,
        coords: Var,
    },
    Norm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
    },
    Unary {
        kind: UnaryKind,
        a: Var,
    },
    Concat {
        parts: Vec<Var>,
    },
    Slice {
        a: Var,
        start: usize,
    },
    Pad {
        a: Var,
        pad: usize,
        mode: PadMode,
    },
    Shuffle {
        a: Var,
        r: usize,
    },
    Reshape {
        a: Var,
    },
    GlobalAvg {
        a: Var,
    },
    ArgGather {
        a: Var,
        arg: Vec<usize>,
    },
    ChannelMean {
        a: Var,
    },
    Sum {
        a: Var,
        scale: f64,
    },
    SmoothL1 {
        a: Var,
        b: Var,
    },
    L1 {
        a: Var,
        b: Var,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    leaves: HashMap<Var, Tensor<T>>,
    params: Vec<(ParamId, Tensor<T>)>,
}

impl<T: Scalar> Gradients<T> {
    /// `dLoss/dLeaf` for a leaf that requires grad, if the loss depends on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&v)
    }

    pub fn params(&self) -> &[(ParamId, Tensor<T>)] {
        &self.params
    }

    /// Add parameter gradients into the store's accumulators.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) {
        for (id, g) in &self.params {
            store.accumulate_grad(*id, g);
        }
    }
}

#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
    consumed: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: HashMap::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop all nodes and make the tape usable again.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.params.clear();
        self.consumed = false;
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Parents of a node, in operand order. Used to audit tape structure.
    pub fn parents(&self, v: Var) -> Vec<Var> {
        match &self.nodes[v.0].op {
            Op::Leaf => vec![],
            Op::Conv { x, w, b, .. } => {
                let mut p = vec![*x, *w];
                p.extend(b);
                p
            }
            Op::Sample { x, coords } => vec![*x, *coords],
            Op::Norm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Binary { a, b, .. } | Op::SmoothL1 { a, b } | Op::L1 { a, b } => vec![*a, *b],
            Op::Concat { parts } => parts.clone(),
            Op::Unary { a, .. }
            | Op::Slice { a, .. }
            | Op::Pad { a, .. }
            | Op::Shuffle { a, .. }
            | Op::Reshape { a }
            | Op::GlobalAvg { a }
            | Op::ArgGather { a, .. }
            | Op::ChannelMean { a }
            | Op::Sum { a, .. } => vec![*a],
        }
    }

    fn live(&self) -> Result<()> {
        if self.consumed {
            Err(Error::TapeConsumed)
        } else {
            Ok(())
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Register a stored tensor as a leaf. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.leaf(store.value(id).clone(), store.requires_grad(id));
        self.nodes[v.0].param = Some(id);
        self.params.insert(id, v);
        v
    }

    // ---------------------------------------------------------------- conv

    #[allow(clippy::too_many_arguments)]
    pub fn conv2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: PaddingSpec,
        dilation: usize,
        groups: usize,
    ) -> Result<Var> {
        self.live()?;
        let (x, pad) = match padding {
            PaddingSpec::Zero(p) => (x, p),
            PaddingSpec::Reflect(p) if p > 0 => (self.pad(x, p, PadMode::Reflect)?, 0),
            PaddingSpec::Reflect(_) => (x, 0),
        };
        let geom = ConvGeom {
            stride,
            padding: pad,
            dilation,
            groups,
        };
        let out = conv::conv2d_forward(self.value(x), self.value(weight), bias.map(|b| self.value(b)), &geom)?;
        let mut parents = vec![x, weight];
        parents.extend(bias);
        Ok(self.push(
            out,
            Op::Conv {
                x,
                w: weight,
                b: bias,
                geom,
            },
            &parents,
        ))
    }

    pub fn grid_sample_bilinear(&mut self, x: Var, coords: Var) -> Result<Var> {
        self.live()?;
        let out = sample::forward(self.value(x), self.value(coords))?;
        Ok(self.push(out, Op::Sample { x, coords }, &[x, coords]))
    }

    // --------------------------------------------------------------- norm

    fn check_affine(&self, x: Var, gamma: Var, beta: Var) -> Result<()> {
        let c = self.shape(x).c;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).numel() != c {
                return Err(Error::shape(
                    "batch_norm",
                    format!("{name} has {} values for {c} channels", self.value(v).numel()),
                ));
            }
        }
        Ok(())
    }

    /// Normalize with the batch moments; returns them for running-stat updates.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchMoments<T>)> {
        self.live()?;
        self.check_affine(x, gamma, beta)?;
        let m = norm::moments(self.value(x));
        let inv_std: Vec<T> = m.var.iter().map(|&v| T::one() / (v + T::of(eps)).sqrt()).collect();
        let out = norm::normalize(
            self.value(x),
            &m.mean,
            &inv_std,
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let v = self.push(
            out,
            Op::Norm {
                x,
                gamma,
                beta,
                mean: m.mean.clone(),
                inv_std,
                batch_stats: true,
            },
            &[x, gamma, beta],
        );
        Ok((v, m))
    }

    /// Normalize with fixed statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[T], var: &[T], eps: f64) -> Result<Var> {
        self.live()?;
        self.check_affine(x, gamma, beta)?;
        let c = self.shape(x).c;
        if mean.len() != c || var.len() != c {
            return Err(Error::shape("batch_norm", "running statistics length"));
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + T::of(eps)).sqrt()).collect();
        let out = norm::normalize(
            self.value(x),
            mean,
            &inv_std,
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        Ok(self.push(
            out,
            Op::Norm {
                x,
                gamma,
                beta,
                mean: mean.to_vec(),
                inv_std,
                batch_stats: false,
            },
            &[x, gamma, beta],
        ))
    }

    // --------------------------------------------------------- pointwise

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        self.live()?;
        let out = ew::binary_forward(kind, self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Binary { kind, a, b }, &[a, b]))
    }

    /// `a + b`; `b` may broadcast over axes where its extent is 1.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    fn unary(&mut self, kind: UnaryKind, a: Var) -> Result<Var> {
        self.live()?;
        let out = ew::unary_forward(kind, self.value(a));
        Ok(self.push(out, Op::Unary { kind, a }, &[a]))
    }

    pub fn scalar_mul(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary(UnaryKind::Scale(s), a)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary(UnaryKind::Offset(s), a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Sigmoid, a)
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Gelu, a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Relu, a)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Abs, a)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi {
            return Err(Error::invalid("clamp", format!("lower bound {lo} above upper {hi}")));
        }
        self.unary(UnaryKind::Clamp(lo, hi), a)
    }

    // ------------------------------------------------------------ layout

    /// Concatenate along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.live()?;
        let vals: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = ew::concat_forward(&vals)?;
        Ok(self.push(out, Op::Concat { parts: parts.to_vec() }, parts))
    }

    pub fn slice_channels(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        self.live()?;
        let out = ew::slice_channels(self.value(a), start, len)?;
        Ok(self.push(out, Op::Slice { a, start }, &[a]))
    }

    /// Pad both spatial axes by `pad` on every side.
    pub fn pad(&mut self, a: Var, pad: usize, mode: PadMode) -> Result<Var> {
        self.live()?;
        let out = ew::pad_forward(self.value(a), pad, mode)?;
        Ok(self.push(out, Op::Pad { a, pad, mode }, &[a]))
    }

    pub fn pixel_shuffle(&mut self, a: Var, r: usize) -> Result<Var> {
        self.live()?;
        let out = ew::pixel_shuffle(self.value(a), r, None)?;
        Ok(self.push(out, Op::Shuffle { a, r }, &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Shape>) -> Result<Var> {
        self.live()?;
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape { a }, &[a]))
    }

    // ------------------------------------------------------- reductions

    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var> {
        self.live()?;
        let out = pool::global_avg(self.value(a));
        Ok(self.push(out, Op::GlobalAvg { a }, &[a]))
    }

    pub fn global_max_pool(&mut self, a: Var) -> Result<Var> {
        self.live()?;
        let (out, arg) = pool::global_max(self.value(a));
        Ok(self.push(out, Op::ArgGather { a, arg }, &[a]))
    }

    /// Per-pixel mean over channels, `(N, 1, H, W)`.
    pub fn channel_mean(&mut self, a: Var) -> Result<Var> {
        self.live()?;
        let out = pool::channel_mean(self.value(a));
        Ok(self.push(out, Op::ChannelMean { a }, &[a]))
    }

    /// Per-pixel max over channels, `(N, 1, H, W)`.
    pub fn channel_max(&mut self, a: Var) -> Result<Var> {
        self.live()?;
        let (out, arg) = pool::channel_max(self.value(a));
        Ok(self.push(out, Op::ArgGather { a, arg }, &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.live()?;
        let out = Tensor::scalar(self.value(a).sum());
        Ok(self.push(out, Op::Sum { a, scale: 1.0 }, &[a]))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.live()?;
        let scale = 1.0 / self.value(a).numel() as f64;
        let out = Tensor::scalar(self.value(a).sum() * T::of(scale));
        Ok(self.push(out, Op::Sum { a, scale }, &[a]))
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Broadcast {
                op,
                lhs: self.shape(a),
                rhs: self.shape(b),
            });
        }
        Ok(())
    }

    /// Mean Huber loss with unit threshold.
    pub fn smooth_l1(&mut self, a: Var, b: Var) -> Result<Var> {
        self.live()?;
        self.check_same("smooth_l1", a, b)?;
        let half = T::of(0.5);
        let total: T = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| {
                let d = (x - y).abs();
                if d < T::one() {
                    half * d * d
                } else {
                    d - half
                }
            })
            .sum();
        let out = Tensor::scalar(total / T::of(self.value(a).numel() as f64));
        Ok(self.push(out, Op::SmoothL1 { a, b }, &[a, b]))
    }

    /// Mean absolute difference.
    pub fn l1(&mut self, a: Var, b: Var) -> Result<Var> {
        self.live()?;
        self.check_same("l1", a, b)?;
        let total: T = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| (x - y).abs())
            .sum();
        let out = Tensor::scalar(total / T::of(self.value(a).numel() as f64));
        Ok(self.push(out, Op::L1 { a, b }, &[a, b]))
    }

    // ---------------------------------------------------------- backward

    /// Backpropagate and consume the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        let g = self.sweep(loss)?;
        self.nodes.clear();
        self.params.clear();
        self.consumed = true;
        Ok(g)
    }

    /// Backpropagate and keep every node for further use.
    pub fn backward_retain(&mut self, loss: Var) -> Result<Gradients<T>> {
        self.sweep(loss)
    }

    fn sweep(&self, loss: Var) -> Result<Gradients<T>> {
        self.live()?;
        let ls = self.shape(loss);
        if ls.numel() != 1 {
            return Err(Error::NonScalarLoss(ls));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(ls, T::one()));
        let mut out = Gradients {
            leaves: HashMap::new(),
            params: Vec::new(),
        };
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                if let Some(pid) = node.param {
                    out.params.push((pid, g.clone()));
                }
                out.leaves.insert(Var(i), g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        out.params.sort_by_key(|(id, _)| *id);
        Ok(out)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        fn acc<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, t: Tensor<T>) {
            match &mut grads[v.0] {
                Some(existing) => existing.data_mut().iter_mut().zip(t.data()).for_each(|(a, b)| *a += *b),
                slot @ None => *slot = Some(t),
            }
        }
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, geom } => {
                let need = [self.needs(*x), self.needs(*w), b.is_some_and(|b| self.needs(b))];
                let cg = conv::conv2d_backward(self.value(*x), self.value(*w), geom, g, need);
                if let Some(d) = cg.input {
                    acc(grads, *x, d);
                }
                if let Some(d) = cg.weight {
                    acc(grads, *w, d);
                }
                if let (Some(b), Some(d)) = (b, cg.bias) {
                    let shape = self.shape(*b);
                    acc(grads, *b, d.reshape(shape).expect("bias grad shape"));
                }
            }
            Op::Sample { x, coords } => {
                let (dx, dc) = sample::backward(
                    self.value(*x),
                    self.value(*coords),
                    g,
                    [self.needs(*x), self.needs(*coords)],
                );
                if let Some(d) = dx {
                    acc(grads, *x, d);
                }
                if let Some(d) = dc {
                    acc(grads, *coords, d);
                }
            }
            Op::Norm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                batch_stats,
            } => {
                let ng = norm::backward(
                    self.value(*x),
                    mean,
                    inv_std,
                    self.value(*gamma).data(),
                    g,
                    *batch_stats,
                );
                if self.needs(*x) {
                    acc(grads, *x, ng.input);
                }
                if self.needs(*gamma) {
                    let s = self.shape(*gamma);
                    acc(grads, *gamma, Tensor::from_vec(s, ng.gamma).expect("gamma grad"));
                }
                if self.needs(*beta) {
                    let s = self.shape(*beta);
                    acc(grads, *beta, Tensor::from_vec(s, ng.beta).expect("beta grad"));
                }
            }
            Op::Binary { kind, a, b } => {
                let (da, db) = ew::binary_backward(
                    *kind,
                    self.value(*a),
                    self.value(*b),
                    g,
                    [self.needs(*a), self.needs(*b)],
                );
                if let Some(d) = da {
                    acc(grads, *a, d);
                }
                if let Some(d) = db {
                    acc(grads, *b, d);
                }
            }
            Op::Unary { kind, a } => {
                acc(grads, *a, ew::unary_backward(*kind, self.value(*a), &node.value, g));
            }
            Op::Concat { parts } => {
                let mut start = 0;
                for p in parts {
                    let c = self.shape(*p).c;
                    if self.needs(*p) {
                        acc(grads, *p, ew::slice_channels(g, start, c).expect("concat grad"));
                    }
                    start += c;
                }
            }
            Op::Slice { a, start } => {
                let mut d = Tensor::zeros(self.shape(*a));
                ew::scatter_channels(&mut d, g, *start);
                acc(grads, *a, d);
            }
            Op::Pad { a, pad, mode } => {
                acc(grads, *a, ew::pad_backward(self.shape(*a), g, *pad, *mode));
            }
            Op::Shuffle { a, r } => {
                let d = ew::pixel_shuffle(self.value(*a), *r, Some(g)).expect("shuffle grad");
                acc(grads, *a, d);
            }
            Op::Reshape { a } => {
                acc(grads, *a, g.clone().reshape(self.shape(*a)).expect("reshape grad"));
            }
            Op::GlobalAvg { a } => acc(grads, *a, pool::global_avg_backward(self.shape(*a), g)),
            Op::ArgGather { a, arg } => acc(grads, *a, pool::scatter_argmax(self.shape(*a), g, arg)),
            Op::ChannelMean { a } => acc(grads, *a, pool::channel_mean_backward(self.shape(*a), g)),
            Op::Sum { a, scale } => {
                acc(grads, *a, Tensor::full(self.shape(*a), g.item() * T::of(*scale)));
            }
            Op::SmoothL1 { a, b } => {
                let inv = g.item() / T::of(self.value(*a).numel() as f64);
                let d = Tensor::from_vec(
                    self.shape(*a),
                    self.value(*a)
                        .data()
                        .iter()
                        .zip(self.value(*b).data())
                        .map(|(&x, &y)| {
                            let d = x - y;
                            let s = if d.abs() < T::one() { d } else { d.signum() };
                            s * inv
                        })
                        .collect(),
                )
                .expect("smooth l1 grad");
                if self.needs(*b) {
                    acc(grads, *b, d.map(|v| -v));
                }
                if self.needs(*a) {
                    acc(grads, *a, d);
                }
            }
            Op::L1 { a, b } => {
                let inv = g.item() / T::of(self.value(*a).numel() as f64);
                let d = Tensor::from_vec(
                    self.shape(*a),
                    self.value(*a)
                        .data()
                        .iter()
                        .zip(self.value(*b).data())
                        .map(|(&x, &y)| {
                            let d = x - y;
                            if d > T::zero() {
                                inv
                            } else if d < T::zero() {
                                -inv
                            } else {
                                T::zero()
                            }
                        })
                        .collect(),
                )
                .expect("l1 grad");
                if self.needs(*b) {
                    acc(grads, *b, d.map(|v| -v));
                }
                if self.needs(*a) {
                    acc(grads, *a, d);
                }
            }
        }
    }
}
