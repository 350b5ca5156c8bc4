//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] walks the tape in reverse and accumulates gradients for
//! every leaf that requires them. A graph is built per forward pass and then
//! dropped; parameters live in [`ParamStore`]s that outlive it.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::kernels as k;
use crate::params::{ParamId, ParamStore, StoreGrads};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddScalar(usize),
    MulScalar(usize, T),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Abs(usize),
    Sqr(usize),
    Tanh(usize),
    Sigmoid(usize),
    LeakyRelu(usize, T),
    Clamp(usize, T, T),
    SumAll(usize),
    MeanAll(usize),
    SumAxes(usize),
    Reshape(usize),
    Linear { x: usize, w: usize, b: Option<usize> },
    Conv2d { x: usize, w: usize, b: Option<usize>, stride: usize, pad: usize },
    UpNearest(usize, usize),
    UpBilinear2x(usize),
    AvgPool(usize, usize),
    PixelShuffle(usize, usize),
    Concat(Vec<usize>),
    AdaIn { x: usize, alpha: usize, beta: usize, eps: f64 },
    SepFilter(usize, Rc<Vec<f64>>),
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => vec![*a, *b],
            AddScalar(a) | MulScalar(a, _) | Exp(a) | Log(a) | Sqrt(a) | Abs(a) | Sqr(a) | Tanh(a)
            | Sigmoid(a) | LeakyRelu(a, _) | Clamp(a, _, _) | SumAll(a) | MeanAll(a) | SumAxes(a)
            | Reshape(a) | UpNearest(a, _) | UpBilinear2x(a) | AvgPool(a, _) | PixelShuffle(a, _)
            | SepFilter(a, _) => vec![*a],
            Linear { x, w, b } | Conv2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Concat(parts) => parts.clone(),
            AdaIn { x, alpha, beta, .. } => vec![*x, *alpha, *beta],
        }
    }
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Operation tape. Cheap to create; build one per forward pass.
pub struct Graph<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    // (store uid, param index) -> node id
    params: RefCell<HashMap<(usize, usize), usize>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T: Scalar> {
    g: &'g Graph<T>,
    id: usize,
}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>) -> Var<'_, T> {
        self.push_rc(Rc::new(value), op)
    }

    fn push_rc(&self, value: Rc<Tensor<T>>, op: Op<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = op.inputs().iter().any(|&i| nodes[i].requires_grad);
        nodes.push(Node { value, op, requires_grad });
        Var { g: self, id: nodes.len() - 1 }
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf)
    }

    /// Leaf whose gradient is reported by [`Gradients::get`].
    pub fn input(&self, value: Tensor<T>) -> Var<'_, T> {
        let v = self.push(value, Op::Leaf);
        self.nodes.borrow_mut()[v.id].requires_grad = true;
        v
    }

    /// Leaf bound to a stored parameter. Repeated calls within one graph
    /// return the same node, so shared weights accumulate one gradient.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var<'_, T> {
        let key = (store.uid(), id.0);
        if let Some(&node) = self.params.borrow().get(&key) {
            return Var { g: self, id: node };
        }
        let v = self.push_rc(store.get_rc(id), Op::Leaf);
        self.nodes.borrow_mut()[v.id].requires_grad = store.is_trainable();
        self.params.borrow_mut().insert(key, v.id);
        v
    }

    fn value(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Reverse-mode pass from a scalar (single-element) output.
    pub fn backward(&self, loss: Var<'_, T>) -> Gradients<T> {
        assert_eq!(loss.value().len(), 1, "backward needs a scalar output");
        self.backward_with(loss, Tensor::ones(loss.shape().to_vec()))
    }

    /// Reverse-mode pass seeded with an explicit output gradient.
    pub fn backward_with(&self, out: Var<'_, T>, seed: Tensor<T>) -> Gradients<T> {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
        grads[out.id] = Some(seed);
        for id in (0..=out.id).rev() {
            let node = &nodes[id];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            for (input, gi) in backward_op(&nodes, id, &g) {
                if !nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&gi),
                    slot => *slot = Some(gi),
                }
            }
        }
        // only leaves keep their gradients
        for (id, node) in nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                grads[id] = None;
            }
        }
        Gradients {
            grads,
            params: self.params.borrow().clone(),
        }
    }

    pub fn concat(&self, parts: &[Var<'_, T>]) -> Var<'_, T> {
        let vals: Vec<_> = parts.iter().map(|p| self.value(p.id)).collect();
        let refs: Vec<&Tensor<T>> = vals.iter().map(|v| &**v).collect();
        let y = k::concat_channels(&refs);
        self.push(y, Op::Concat(parts.iter().map(|p| p.id).collect()))
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: HashMap<(usize, usize), usize>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads[v.id].as_ref()
    }

    /// Gradients for every parameter of `store` used in the graph.
    pub fn for_store(&self, store: &ParamStore<T>) -> StoreGrads<T> {
        let grads = store
            .ids()
            .map(|pid| {
                self.params
                    .get(&(store.uid(), pid.0))
                    .and_then(|&node| self.grads[node].clone())
            })
            .collect();
        StoreGrads { grads }
    }
}

fn unary_grad<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, g: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(y.data())
        .zip(g.data())
        .map(|((&xv, &yv), &gv)| gv * f(xv, yv))
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("unary grad")
}

fn backward_op<T: Scalar>(nodes: &[Node<T>], id: usize, g: &Tensor<T>) -> Vec<(usize, Tensor<T>)> {
    let val = |i: usize| &*nodes[i].value;
    let needs = |i: usize| nodes[i].requires_grad;
    let y = val(id);
    match &nodes[id].op {
        Op::Leaf => vec![],
        Op::Add(a, b) => {
            let (ga, gb) = k::broadcast_binary_backward(val(*a), val(*b), g, |_, _| T::one(), |_, _| T::one());
            vec![(*a, ga), (*b, gb)]
        }
        Op::Sub(a, b) => {
            let (ga, gb) = k::broadcast_binary_backward(val(*a), val(*b), g, |_, _| T::one(), |_, _| -T::one());
            vec![(*a, ga), (*b, gb)]
        }
        Op::Mul(a, b) => {
            let (ga, gb) = k::broadcast_binary_backward(val(*a), val(*b), g, |_, bv| bv, |av, _| av);
            vec![(*a, ga), (*b, gb)]
        }
        Op::Div(a, b) => {
            let (ga, gb) = k::broadcast_binary_backward(
                val(*a),
                val(*b),
                g,
                |_, bv| T::one() / bv,
                |av, bv| -av / (bv * bv),
            );
            vec![(*a, ga), (*b, gb)]
        }
        Op::AddScalar(a) => vec![(*a, g.clone())],
        Op::MulScalar(a, s) => vec![(*a, g.scale(*s))],
        Op::Exp(a) => vec![(*a, unary_grad(val(*a), y, g, |_, yv| yv))],
        Op::Log(a) => vec![(*a, unary_grad(val(*a), y, g, |xv, _| T::one() / xv))],
        Op::Sqrt(a) => {
            let two = T::from_f64_lossy(2.0);
            vec![(*a, unary_grad(val(*a), y, g, |_, yv| T::one() / (two * yv)))]
        }
        Op::Abs(a) => vec![(*a, unary_grad(val(*a), y, g, |xv, _| {
            if xv > T::zero() {
                T::one()
            } else if xv < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        }))],
        Op::Sqr(a) => {
            let two = T::from_f64_lossy(2.0);
            vec![(*a, unary_grad(val(*a), y, g, |xv, _| two * xv))]
        }
        Op::Tanh(a) => vec![(*a, unary_grad(val(*a), y, g, |_, yv| T::one() - yv * yv))],
        Op::Sigmoid(a) => vec![(*a, unary_grad(val(*a), y, g, |_, yv| yv * (T::one() - yv)))],
        Op::LeakyRelu(a, slope) => {
            let s = *slope;
            vec![(*a, unary_grad(val(*a), y, g, |xv, _| if xv > T::zero() { T::one() } else { s }))]
        }
        Op::Clamp(a, lo, hi) => {
            let (lo, hi) = (*lo, *hi);
            vec![(*a, unary_grad(val(*a), y, g, |xv, _| {
                if xv < lo || xv > hi {
                    T::zero()
                } else {
                    T::one()
                }
            }))]
        }
        Op::SumAll(a) => vec![(*a, Tensor::full(val(*a).shape().to_vec(), g.data()[0]))],
        Op::MeanAll(a) => {
            let x = val(*a);
            let v = g.data()[0] / T::from_f64_lossy(x.len() as f64);
            vec![(*a, Tensor::full(x.shape().to_vec(), v))]
        }
        Op::SumAxes(a) => vec![(*a, k::expand_to(g, val(*a).shape()))],
        Op::Reshape(a) => vec![(*a, g.reshape(val(*a).shape().to_vec()).expect("reshape grad"))],
        Op::Linear { x, w, b } => {
            let (gx, gw, gb) = k::linear_backward(val(*x), val(*w), g);
            let mut out = vec![(*x, gx), (*w, gw)];
            if let Some(b) = b {
                out.push((*b, gb));
            }
            out
        }
        Op::Conv2d { x, w, b, stride, pad } => {
            let (gx, gw, gb) = k::conv2d_backward(val(*x), val(*w), g, *stride, *pad, needs(*x));
            let mut out = vec![(*w, gw)];
            if let Some(gx) = gx {
                out.push((*x, gx));
            }
            if let Some(b) = b {
                out.push((*b, gb));
            }
            out
        }
        Op::UpNearest(a, f) => vec![(*a, k::upsample_nearest_backward(g, *f))],
        Op::UpBilinear2x(a) => vec![(*a, k::upsample_bilinear2x_backward(g))],
        Op::AvgPool(a, f) => vec![(*a, k::avg_pool_backward(g, *f))],
        Op::PixelShuffle(a, r) => vec![(*a, k::pixel_shuffle_backward(g, *r))],
        Op::Concat(parts) => {
            let sizes: Vec<usize> = parts.iter().map(|&p| val(p).dim(1)).collect();
            parts.iter().copied().zip(k::split_channels(g, &sizes)).collect()
        }
        Op::AdaIn { x, alpha, beta, eps } => {
            let (gx, ga, gb) = k::adain_backward(val(*x), val(*alpha), g, *eps);
            vec![(*x, gx), (*alpha, ga), (*beta, gb)]
        }
        Op::SepFilter(a, kernel) => {
            let x = val(*a);
            vec![(*a, k::sep_filter_valid_backward(g, kernel, x.dim(2), x.dim(3)))]
        }
    }
}

impl<'g, T: Scalar> Var<'g, T> {
    pub fn graph(&self) -> &'g Graph<T> {
        self.g
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.g.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.g.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// Scalar value of a single-element node.
    pub fn item(&self) -> T {
        let v = self.value();
        assert_eq!(v.len(), 1, "item() on tensor of shape {:?}", v.shape());
        v.data()[0]
    }

    /// Same value, cut from the tape.
    pub fn detach(&self) -> Var<'g, T> {
        self.g.push_rc(self.value(), Op::Leaf)
    }

    fn unary(&self, op: Op<T>, f: impl Fn(T) -> T) -> Var<'g, T> {
        let y = self.value().map(f);
        self.g.push(y, op)
    }

    fn binary(&self, other: Var<'g, T>, op: Op<T>, f: impl Fn(T, T) -> T) -> Var<'g, T> {
        let y = k::broadcast_binary(&self.value(), &other.value(), f);
        self.g.push(y, op)
    }

    pub fn add(&self, o: Var<'g, T>) -> Var<'g, T> {
        self.binary(o, Op::Add(self.id, o.id), |a, b| a + b)
    }

    pub fn sub(&self, o: Var<'g, T>) -> Var<'g, T> {
        self.binary(o, Op::Sub(self.id, o.id), |a, b| a - b)
    }

    pub fn mul(&self, o: Var<'g, T>) -> Var<'g, T> {
        self.binary(o, Op::Mul(self.id, o.id), |a, b| a * b)
    }

    pub fn div(&self, o: Var<'g, T>) -> Var<'g, T> {
        self.binary(o, Op::Div(self.id, o.id), |a, b| a / b)
    }

    pub fn add_scalar(&self, s: f64) -> Var<'g, T> {
        let s = T::from_f64_lossy(s);
        self.unary(Op::AddScalar(self.id), |v| v + s)
    }

    pub fn mul_scalar(&self, s: f64) -> Var<'g, T> {
        let s = T::from_f64_lossy(s);
        self.unary(Op::MulScalar(self.id, s), |v| v * s)
    }

    pub fn neg(&self) -> Var<'g, T> {
        self.mul_scalar(-1.0)
    }

    pub fn exp(&self) -> Var<'g, T> {
        self.unary(Op::Exp(self.id), |v| v.exp())
    }

    pub fn log(&self) -> Var<'g, T> {
        self.unary(Op::Log(self.id), |v| v.ln())
    }

    pub fn sqrt(&self) -> Var<'g, T> {
        self.unary(Op::Sqrt(self.id), |v| v.sqrt())
    }

    pub fn abs(&self) -> Var<'g, T> {
        self.unary(Op::Abs(self.id), |v| v.abs())
    }

    pub fn sqr(&self) -> Var<'g, T> {
        self.unary(Op::Sqr(self.id), |v| v * v)
    }

    pub fn tanh(&self) -> Var<'g, T> {
        self.unary(Op::Tanh(self.id), |v| v.tanh())
    }

    pub fn sigmoid(&self) -> Var<'g, T> {
        self.unary(Op::Sigmoid(self.id), |v| T::one() / (T::one() + (-v).exp()))
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<'g, T> {
        let s = T::from_f64_lossy(slope);
        self.unary(Op::LeakyRelu(self.id, s), |v| if v > T::zero() { v } else { v * s })
    }

    pub fn relu(&self) -> Var<'g, T> {
        self.leaky_relu(0.0)
    }

    /// Clamp with zero gradient outside `[lo, hi]`.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'g, T> {
        let (lo, hi) = (T::from_f64_lossy(lo), T::from_f64_lossy(hi));
        self.unary(Op::Clamp(self.id, lo, hi), |v| v.max(lo).min(hi))
    }

    pub fn sum(&self) -> Var<'g, T> {
        let s = self.value().sum();
        self.g.push(Tensor::scalar(s), Op::SumAll(self.id))
    }

    pub fn mean(&self) -> Var<'g, T> {
        let s = self.value().mean();
        self.g.push(Tensor::scalar(s), Op::MeanAll(self.id))
    }

    /// Sum over `axes`, keeping them as size-1 dims.
    pub fn sum_axes(&self, axes: &[usize]) -> Var<'g, T> {
        let y = k::sum_axes(&self.value(), axes);
        self.g.push(y, Op::SumAxes(self.id))
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Var<'g, T> {
        let shape = self.shape();
        let n: usize = axes.iter().map(|&a| shape[a]).product();
        self.sum_axes(axes).mul_scalar(1.0 / n as f64)
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Var<'g, T> {
        let y = self.value().reshape(shape).expect("reshape element count");
        self.g.push(y, Op::Reshape(self.id))
    }

    pub fn linear(&self, w: Var<'g, T>, b: Option<Var<'g, T>>) -> Var<'g, T> {
        let bv = b.map(|b| b.value());
        let y = k::linear(&self.value(), &w.value(), bv.as_deref());
        self.g.push(y, Op::Linear { x: self.id, w: w.id, b: b.map(|b| b.id) })
    }

    pub fn conv2d(&self, w: Var<'g, T>, b: Option<Var<'g, T>>, stride: usize, pad: usize) -> Var<'g, T> {
        let bv = b.map(|b| b.value());
        let y = k::conv2d(&self.value(), &w.value(), bv.as_deref(), stride, pad);
        self.g.push(
            y,
            Op::Conv2d { x: self.id, w: w.id, b: b.map(|b| b.id), stride, pad },
        )
    }

    pub fn upsample_nearest(&self, factor: usize) -> Var<'g, T> {
        let y = k::upsample_nearest(&self.value(), factor);
        self.g.push(y, Op::UpNearest(self.id, factor))
    }

    pub fn upsample_bilinear2x(&self) -> Var<'g, T> {
        let y = k::upsample_bilinear2x(&self.value());
        self.g.push(y, Op::UpBilinear2x(self.id))
    }

    pub fn avg_pool(&self, factor: usize) -> Var<'g, T> {
        let y = k::avg_pool(&self.value(), factor);
        self.g.push(y, Op::AvgPool(self.id, factor))
    }

    pub fn pixel_shuffle(&self, r: usize) -> Var<'g, T> {
        let y = k::pixel_shuffle(&self.value(), r);
        self.g.push(y, Op::PixelShuffle(self.id, r))
    }

    /// Adaptive instance normalization with `[n, c]` scale and shift.
    pub fn adain(&self, alpha: Var<'g, T>, beta: Var<'g, T>, eps: f64) -> Var<'g, T> {
        let y = k::adain(&self.value(), &alpha.value(), &beta.value(), eps);
        self.g.push(y, Op::AdaIn { x: self.id, alpha: alpha.id, beta: beta.id, eps })
    }

    pub fn sep_filter_valid(&self, kernel: Rc<Vec<f64>>) -> Var<'g, T> {
        let y = k::sep_filter_valid(&self.value(), &kernel);
        self.g.push(y, Op::SepFilter(self.id, kernel))
    }
}
