//! Reverse-mode automatic differentiation over an explicit operation record.
//!
//! A [`Graph`] owns the record (the tape). Every operation called on it
//! computes its value eagerly and, when gradients are enabled and at least
//! one input is tracked, appends a node holding its inputs and whatever the
//! backward rule needs. [`Graph::backward`] replays the record in reverse.
//!
//! Leaf gradients accumulate across repeated `backward` calls on the same
//! graph until [`Graph::zero_grad`]; gradients of intermediate values
//! reflect the most recent call only.
//!
//! A graph is single-writer (`!Sync`). Values are shared through `Arc`, so
//! parameters can be read by several graphs on different threads.

use std::cell::{Cell, RefCell};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::conv::{self, ConvAlgo, ConvGeom};
use crate::tensor::ops::{self, BnSaved, PoolAxis, PoolKind};
use crate::tensor::{Shape4, Tensor4};

type NodeId = usize;

/// A value produced on a graph. Cheap to clone.
#[derive(Clone, Debug)]
pub struct Var<T> {
    node: Option<NodeId>,
    value: Arc<Tensor4<T>>,
}

impl<T: Real> Var<T> {
    pub fn value(&self) -> &Tensor4<T> {
        &self.value
    }

    pub fn shape(&self) -> Shape4 {
        self.value.shape()
    }

    /// Whether gradients flow to this value.
    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    pub fn to_tensor(&self) -> Tensor4<T> {
        (*self.value).clone()
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var<T>,
        w: Var<T>,
        b: Option<Var<T>>,
        geom: ConvGeom,
        algo: ConvAlgo,
    },
    BatchNorm {
        x: Var<T>,
        gamma: Var<T>,
        beta: Var<T>,
        saved: BnSaved<T>,
        train: bool,
    },
    Relu {
        x: Var<T>,
    },
    Sigmoid {
        x: Var<T>,
        out: Arc<Tensor4<T>>,
    },
    Add {
        a: Var<T>,
        b: Var<T>,
    },
    Sub {
        a: Var<T>,
        b: Var<T>,
    },
    Mul {
        a: Var<T>,
        b: Var<T>,
    },
    Scale {
        x: Var<T>,
        factor: T,
    },
    Concat {
        a: Var<T>,
        b: Var<T>,
    },
    SliceChannels {
        x: Var<T>,
        start: usize,
    },
    MaxPool2 {
        x: Var<T>,
        argmax: Vec<usize>,
    },
    Resize {
        x: Var<T>,
    },
    GlobalPool {
        x: Var<T>,
        kind: PoolKind,
        axis: PoolAxis,
        argmax: Option<Vec<usize>>,
    },
    Sum {
        x: Var<T>,
    },
    MaskedSum {
        x: Var<T>,
        mask: Tensor4<T>,
    },
    Mse {
        pred: Var<T>,
        target: Var<T>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Relu { .. } => "relu",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul_broadcast",
            Op::Scale { .. } => "scale",
            Op::Concat { .. } => "concat_channels",
            Op::SliceChannels { .. } => "slice_channels",
            Op::MaxPool2 { .. } => "max_pool2",
            Op::Resize { .. } => "upsample_bilinear",
            Op::GlobalPool { .. } => "global_pool",
            Op::Sum { .. } => "sum",
            Op::MaskedSum { .. } => "masked_sum",
            Op::Mse { .. } => "mse_loss",
        }
    }
}

struct Node<T> {
    op: Op<T>,
    shape: Shape4,
}

/// Batch statistics produced by a train-mode batch norm, for the caller to
/// fold into its running statistics.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased variance over `(n, h, w)`.
    pub var: Vec<T>,
    /// Number of elements per channel the statistics were taken over.
    pub count: usize,
}

pub struct Graph<T> {
    nodes: RefCell<Vec<Node<T>>>,
    grads: RefCell<Vec<Option<Tensor4<T>>>>,
    grad_enabled: bool,
    conv_algo: Cell<ConvAlgo>,
    backward_visits: Cell<usize>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    /// A recording graph.
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(Vec::new()),
            grad_enabled: true,
            conv_algo: Cell::new(ConvAlgo::Fast),
            backward_visits: Cell::new(0),
        }
    }

    /// A graph that records nothing; intermediate values are freed as soon
    /// as their `Var`s are dropped.
    pub fn no_grad() -> Self {
        Graph {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn set_conv_algo(&self, algo: ConvAlgo) {
        self.conv_algo.set(algo);
    }

    /// Number of recorded nodes, leaves included.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of recorded non-leaf operations.
    pub fn num_ops(&self) -> usize {
        self.nodes.borrow().iter().filter(|n| !matches!(n.op, Op::Leaf)).count()
    }

    /// Operations visited by the most recent [`Graph::backward`].
    pub fn last_backward_visits(&self) -> usize {
        self.backward_visits.get()
    }

    /// A constant: no gradient flows to it.
    pub fn constant(&self, t: Tensor4<T>) -> Var<T> {
        Var {
            node: None,
            value: Arc::new(t),
        }
    }

    pub fn constant_arc(&self, t: Arc<Tensor4<T>>) -> Var<T> {
        Var { node: None, value: t }
    }

    /// A leaf; tracked when `requires_grad` and the graph records.
    pub fn leaf(&self, t: Tensor4<T>, requires_grad: bool) -> Var<T> {
        self.leaf_arc(Arc::new(t), requires_grad)
    }

    pub fn leaf_arc(&self, t: Arc<Tensor4<T>>, requires_grad: bool) -> Var<T> {
        if !(requires_grad && self.grad_enabled) {
            return self.constant_arc(t);
        }
        let id = self.push(Op::Leaf, t.shape());
        Var {
            node: Some(id),
            value: t,
        }
    }

    fn push(&self, op: Op<T>, shape: Shape4) -> NodeId {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, shape });
        nodes.len() - 1
    }

    fn finish(&self, value: Tensor4<T>, op: impl FnOnce() -> Op<T>, tracked: bool) -> Result<Var<T>> {
        self.finish_arc(Arc::new(value), op, tracked)
    }

    fn finish_arc(&self, value: Arc<Tensor4<T>>, op: impl FnOnce() -> Op<T>, tracked: bool) -> Result<Var<T>> {
        if cfg!(debug_assertions) && !value.is_finite() {
            let op = op();
            return Err(Error::Numeric(format!("{} produced a non-finite value", op.name())));
        }
        let node = if tracked && self.grad_enabled {
            Some(self.push(op(), value.shape()))
        } else {
            None
        };
        Ok(Var { node, value })
    }

    // -----------------------------------------------------------------------
    // Operations

    pub fn conv2d(&self, x: &Var<T>, w: &Var<T>, b: Option<&Var<T>>, geom: ConvGeom) -> Result<Var<T>> {
        let algo = self.conv_algo.get();
        let bias = b.map(|b| b.value.data());
        let y = conv::conv2d_forward(&x.value, &w.value, bias, geom, algo)?;
        let tracked = x.is_tracked() || w.is_tracked() || b.is_some_and(|b| b.is_tracked());
        self.finish(
            y,
            || Op::Conv2d {
                x: x.clone(),
                w: w.clone(),
                b: b.cloned(),
                geom,
                algo,
            },
            tracked,
        )
    }

    /// Returns the output and, in train mode, the batch statistics.
    pub fn batch_norm(
        &self,
        x: &Var<T>,
        gamma: &Var<T>,
        beta: &Var<T>,
        running: (&[T], &[T]),
        train: bool,
        eps: f64,
    ) -> Result<(Var<T>, Option<BatchStats<T>>)> {
        let (y, saved) = ops::batch_norm_forward(&x.value, gamma.value.data(), beta.value.data(), running, train, eps)?;
        let stats = train.then(|| BatchStats {
            mean: saved.batch_mean.clone(),
            var: saved.batch_var.clone(),
            count: x.shape().n * x.shape().plane(),
        });
        let tracked = x.is_tracked() || gamma.is_tracked() || beta.is_tracked();
        let out = self.finish(
            y,
            || Op::BatchNorm {
                x: x.clone(),
                gamma: gamma.clone(),
                beta: beta.clone(),
                saved,
                train,
            },
            tracked,
        )?;
        Ok((out, stats))
    }

    pub fn relu(&self, x: &Var<T>) -> Result<Var<T>> {
        let y = x.value.map(|v| if v > T::zero() { v } else { T::zero() });
        self.finish(y, || Op::Relu { x: x.clone() }, x.is_tracked())
    }

    pub fn sigmoid(&self, x: &Var<T>) -> Result<Var<T>> {
        let y = Arc::new(x.value.map(|v| T::one() / (T::one() + (-v).exp())));
        let out = y.clone();
        self.finish_arc(y, || Op::Sigmoid { x: x.clone(), out }, x.is_tracked())
    }

    fn same_shape(op: &'static str, a: &Var<T>, b: &Var<T>) -> Result<()> {
        if a.shape() != b.shape() {
            return Err(Error::dim(op, format!("{} vs {}", a.shape(), b.shape())));
        }
        Ok(())
    }

    pub fn add(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        Self::same_shape("add", a, b)?;
        let mut y = a.to_tensor();
        y.add_assign(&b.value);
        self.finish(
            y,
            || Op::Add {
                a: a.clone(),
                b: b.clone(),
            },
            a.is_tracked() || b.is_tracked(),
        )
    }

    pub fn sub(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        Self::same_shape("sub", a, b)?;
        let data = a
            .value
            .data()
            .iter()
            .zip(b.value.data())
            .map(|(&x, &y)| x - y)
            .collect();
        let y = Tensor4::from_raw(a.shape(), data);
        self.finish(
            y,
            || Op::Sub {
                a: a.clone(),
                b: b.clone(),
            },
            a.is_tracked() || b.is_tracked(),
        )
    }

    /// `a ⊙ b` where `b` is `[n,c,h,w]`, `[n,c,1,1]` or `[n,1,h,w]`.
    pub fn mul_broadcast(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let y = ops::mul_broadcast(&a.value, &b.value)?;
        self.finish(
            y,
            || Op::Mul {
                a: a.clone(),
                b: b.clone(),
            },
            a.is_tracked() || b.is_tracked(),
        )
    }

    pub fn scale(&self, x: &Var<T>, factor: T) -> Result<Var<T>> {
        let y = x.value.map(|v| v * factor);
        self.finish(y, || Op::Scale { x: x.clone(), factor }, x.is_tracked())
    }

    pub fn concat_channels(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let y = ops::concat_channels(&a.value, &b.value)?;
        self.finish(
            y,
            || Op::Concat {
                a: a.clone(),
                b: b.clone(),
            },
            a.is_tracked() || b.is_tracked(),
        )
    }

    pub fn slice_channels(&self, x: &Var<T>, start: usize, len: usize) -> Result<Var<T>> {
        let y = x.value.slice_channels(start, len)?;
        self.finish(y, || Op::SliceChannels { x: x.clone(), start }, x.is_tracked())
    }

    pub fn max_pool2(&self, x: &Var<T>) -> Result<Var<T>> {
        let (y, argmax) = ops::max_pool2(&x.value)?;
        self.finish(y, || Op::MaxPool2 { x: x.clone(), argmax }, x.is_tracked())
    }

    /// Bilinear 2x upsampling, half-pixel centres with edge clamping.
    pub fn upsample_bilinear2(&self, x: &Var<T>) -> Result<Var<T>> {
        let s = x.shape();
        self.resize_bilinear(x, 2 * s.h, 2 * s.w)
    }

    pub fn resize_bilinear(&self, x: &Var<T>, h: usize, w: usize) -> Result<Var<T>> {
        let y = ops::resize_bilinear(&x.value, h, w)?;
        self.finish(y, || Op::Resize { x: x.clone() }, x.is_tracked())
    }

    pub fn global_pool(&self, x: &Var<T>, kind: PoolKind, axis: PoolAxis) -> Result<Var<T>> {
        let (y, argmax) = ops::global_pool(&x.value, kind, axis);
        self.finish(
            y,
            || Op::GlobalPool {
                x: x.clone(),
                kind,
                axis,
                argmax,
            },
            x.is_tracked(),
        )
    }

    /// Scalar sum of all elements.
    pub fn sum(&self, x: &Var<T>) -> Result<Var<T>> {
        let y = Tensor4::scalar(T::from_f64_lossy(x.value.sum()));
        self.finish(y, || Op::Sum { x: x.clone() }, x.is_tracked())
    }

    /// Scalar `Σ mask ⊙ x`; the mask is a constant.
    pub fn masked_sum(&self, x: &Var<T>, mask: &Tensor4<T>) -> Result<Var<T>> {
        if mask.shape() != x.shape() {
            return Err(Error::dim(
                "masked_sum",
                format!("mask {} vs input {}", mask.shape(), x.shape()),
            ));
        }
        let s: f64 = x
            .value
            .data()
            .iter()
            .zip(mask.data())
            .map(|(&v, &m)| (v * m).as_f64())
            .sum();
        let y = Tensor4::scalar(T::from_f64_lossy(s));
        self.finish(
            y,
            || Op::MaskedSum {
                x: x.clone(),
                mask: mask.clone(),
            },
            x.is_tracked(),
        )
    }

    /// Scalar mean of squared differences.
    pub fn mse(&self, pred: &Var<T>, target: &Var<T>) -> Result<Var<T>> {
        Self::same_shape("mse_loss", pred, target)?;
        let sq: f64 = pred
            .value
            .data()
            .iter()
            .zip(target.value.data())
            .map(|(&p, &t)| {
                let d = p.as_f64() - t.as_f64();
                d * d
            })
            .sum();
        let y = Tensor4::scalar(T::from_f64_lossy(sq / pred.value.numel() as f64));
        self.finish(
            y,
            || Op::Mse {
                pred: pred.clone(),
                target: target.clone(),
            },
            pred.is_tracked() || target.is_tracked(),
        )
    }

    // -----------------------------------------------------------------------
    // Backward

    /// Back-propagates from a scalar `[1,1,1,1]` value.
    pub fn backward(&self, loss: &Var<T>) -> Result<()> {
        if loss.shape() != Shape4::new(1, 1, 1, 1) {
            return Err(Error::Usage(format!(
                "backward needs a scalar [1, 1, 1, 1] loss, got {}",
                loss.shape()
            )));
        }
        let root = loss
            .node
            .ok_or_else(|| Error::Usage("backward: loss is not connected to any tracked value".into()))?;
        let nodes = self.nodes.borrow();
        let mut grads = self.grads.borrow_mut();
        grads.resize_with(nodes.len(), || None);
        for (i, node) in nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                grads[i] = None;
            }
        }
        accumulate(&mut grads, root, Tensor4::scalar(T::one()));

        let mut visits = 0;
        for id in (0..=root).rev() {
            let node = &nodes[id];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            visits += 1;
            let Some(dy) = grads[id].take() else {
                continue;
            };
            debug_assert_eq!(dy.shape(), node.shape);
            propagate(&node.op, &dy, &mut grads)?;
            grads[id] = Some(dy);
        }
        self.backward_visits.set(visits);
        Ok(())
    }

    /// Gradient of the most recent backward pass with respect to `v`.
    pub fn grad(&self, v: &Var<T>) -> Option<Tensor4<T>> {
        let id = v.node?;
        self.grads.borrow().get(id).and_then(|g| g.clone())
    }

    pub fn zero_grad(&self) {
        self.grads.borrow_mut().iter_mut().for_each(|g| *g = None);
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor4<T>>], id: NodeId, g: Tensor4<T>) {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn send<T: Real>(grads: &mut [Option<Tensor4<T>>], v: &Var<T>, g: impl FnOnce() -> Tensor4<T>) {
    if let Some(id) = v.node {
        accumulate(grads, id, g());
    }
}

fn propagate<T: Real>(op: &Op<T>, dy: &Tensor4<T>, grads: &mut [Option<Tensor4<T>>]) -> Result<()> {
    match op {
        Op::Leaf => {}
        Op::Conv2d { x, w, b, geom, algo } => {
            let cg = conv::conv2d_backward(&x.value, &w.value, dy, *geom, *algo, x.is_tracked())?;
            if let Some(dx) = cg.input {
                send(grads, x, || dx);
            }
            send(grads, w, || cg.weight);
            if let Some(b) = b {
                let bs = b.shape();
                send(grads, b, || Tensor4::from_raw(bs, cg.bias));
            }
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            saved,
            train,
        } => {
            let (dx, dg, db) = ops::batch_norm_backward(dy, gamma.value.data(), saved, *train);
            send(grads, x, || dx);
            send(grads, gamma, || Tensor4::from_raw(gamma.shape(), dg));
            send(grads, beta, || Tensor4::from_raw(beta.shape(), db));
        }
        Op::Relu { x } => send(grads, x, || {
            let data = x
                .value
                .data()
                .iter()
                .zip(dy.data())
                .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
                .collect();
            Tensor4::from_raw(dy.shape(), data)
        }),
        Op::Sigmoid { x, out } => send(grads, x, || {
            let data = out
                .data()
                .iter()
                .zip(dy.data())
                .map(|(&s, &g)| g * s * (T::one() - s))
                .collect();
            Tensor4::from_raw(dy.shape(), data)
        }),
        Op::Add { a, b } => {
            send(grads, a, || dy.clone());
            send(grads, b, || dy.clone());
        }
        Op::Sub { a, b } => {
            send(grads, a, || dy.clone());
            send(grads, b, || dy.map(|g| -g));
        }
        Op::Mul { a, b } => {
            let (da, db) = ops::mul_broadcast_backward(&a.value, &b.value, dy);
            send(grads, a, || da);
            send(grads, b, || db);
        }
        Op::Scale { x, factor } => send(grads, x, || dy.map(|g| g * *factor)),
        Op::Concat { a, b } => {
            let ca = a.shape().c;
            let cb = b.shape().c;
            send(grads, a, || dy.slice_channels(0, ca).expect("concat split"));
            send(grads, b, || dy.slice_channels(ca, cb).expect("concat split"));
        }
        Op::SliceChannels { x, start } => send(grads, x, || {
            let xs = x.shape();
            let len = dy.shape().c;
            let mut dx = Tensor4::zeros(xs);
            for n in 0..xs.n {
                for c in 0..len {
                    dx.plane_mut(n, start + c).copy_from_slice(dy.plane(n, c));
                }
            }
            dx
        }),
        Op::MaxPool2 { x, argmax } => send(grads, x, || ops::max_pool2_backward(x.shape(), argmax, dy)),
        Op::Resize { x } => send(grads, x, || ops::resize_bilinear_backward(x.shape(), dy)),
        Op::GlobalPool { x, kind, axis, argmax } => send(grads, x, || {
            ops::global_pool_backward(x.shape(), *kind, *axis, argmax.as_deref(), dy)
        }),
        Op::Sum { x } => {
            let g = dy.data()[0];
            send(grads, x, || Tensor4::full(x.shape(), g));
        }
        Op::MaskedSum { x, mask } => {
            let g = dy.data()[0];
            send(grads, x, || mask.map(|m| m * g));
        }
        Op::Mse { pred, target } => {
            let n = T::from_usize_lossy(pred.value.numel());
            let k = dy.data()[0] * (T::one() + T::one()) / n;
            let diff: Vec<T> = pred
                .value
                .data()
                .iter()
                .zip(target.value.data())
                .map(|(&p, &t)| (p - t) * k)
                .collect();
            let shape = pred.shape();
            if target.is_tracked() {
                let neg: Vec<T> = diff.iter().map(|&d| -d).collect();
                send(grads, target, || Tensor4::from_raw(shape, neg));
            }
            send(grads, pred, || Tensor4::from_raw(shape, diff));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let g = Graph::<f64>::new();
        let x = g.leaf(
            Tensor4::from_fn([2, 3, 2, 2], |n, c, y, x| (n + c + y + x) as f64),
            true,
        );
        let loss = g.sum(&x).unwrap();
        g.backward(&loss).unwrap();
        assert_eq!(g.grad(&x).unwrap(), Tensor4::full([2, 3, 2, 2], 1.0));
    }

    #[test]
    fn dead_relu_gives_zero_gradient() {
        let g = Graph::<f64>::new();
        let x = g.leaf(Tensor4::full([1, 2, 3, 3], 0.7), true);
        let neg = g.scale(&x, -1.0).unwrap();
        let r = g.relu(&neg).unwrap();
        let loss = g.sum(&r).unwrap();
        g.backward(&loss).unwrap();
        assert_eq!(g.grad(&x).unwrap(), Tensor4::zeros([1, 2, 3, 3]));
    }

    #[test]
    fn relu_sigmoid_values() {
        let g = Graph::<f32>::no_grad();
        let x = g.constant(Tensor4::from_vec([1, 1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap());
        assert_eq!(g.relu(&x).unwrap().value().data(), &[0.0, 0.0, 2.0]);
        let z = g.constant(Tensor4::scalar(0.0f32));
        assert_eq!(g.sigmoid(&z).unwrap().value().data(), &[0.5]);
        assert!(g.is_empty());
    }

    #[test]
    fn backward_rejects_non_scalar_and_untracked() {
        let g = Graph::<f64>::new();
        let x = g.leaf(Tensor4::zeros([1, 1, 2, 2]), true);
        assert!(matches!(g.backward(&x), Err(Error::Usage(_))));
        let c = g.constant(Tensor4::scalar(1.0));
        assert!(matches!(g.backward(&c), Err(Error::Usage(_))));
    }

    #[test]
    fn repeated_backward_accumulates_leaf_gradients() {
        let g = Graph::<f64>::new();
        let x = g.leaf(Tensor4::full([1, 1, 2, 2], 1.0), true);
        let loss = g.sum(&x).unwrap();
        g.backward(&loss).unwrap();
        g.backward(&loss).unwrap();
        assert_eq!(g.grad(&x).unwrap(), Tensor4::full([1, 1, 2, 2], 2.0));
        g.zero_grad();
        g.backward(&loss).unwrap();
        assert_eq!(g.grad(&x).unwrap(), Tensor4::full([1, 1, 2, 2], 1.0));
    }

    #[test]
    fn each_op_visited_once() {
        let g = Graph::<f64>::new();
        let x = g.leaf(Tensor4::full([1, 2, 4, 4], 0.5), true);
        let a = g.relu(&x).unwrap();
        let b = g.add(&a, &x).unwrap();
        let c = g.max_pool2(&b).unwrap();
        let d = g.upsample_bilinear2(&c).unwrap();
        let e = g.mul_broadcast(&d, &b).unwrap();
        let loss = g.sum(&e).unwrap();
        g.backward(&loss).unwrap();
        assert_eq!(g.num_ops(), 6);
        assert_eq!(g.last_backward_visits(), 6);
    }

    #[test]
    fn no_grad_graph_keeps_nothing() {
        let g = Graph::<f32>::no_grad();
        let x = g.leaf(Tensor4::full([1, 1, 2, 2], 1.0), true);
        assert!(!x.is_tracked());
        let y = g.relu(&x).unwrap();
        assert!(!y.is_tracked());
        assert_eq!(g.len(), 0);
    }
}
