//! Eagerly evaluated computation graph with reverse-mode differentiation.
//!
//! Every backward rule is written in terms of graph operations, so calling
//! [`Graph::grad`] with `create_graph = true` records the gradient computation
//! itself and the result can be differentiated again. That is what a gradient
//! penalty on a critic needs: the penalty is a function of `d critic / d input`
//! and must be differentiated with respect to the critic's weights.

use std::cell::{Cell, RefCell};

use crate::conv::{self, ConvGeom};
use crate::tensor::numel;
use crate::{Element, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone)]
enum Op<E> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, E),
    AddScalar(Var),
    /// Product with a constant tensor (activation slopes, dropout masks, signs).
    MulConst(Var, Tensor<E>),
    Tanh(Var),
    Sigmoid(Var),
    Log(Var),
    Sqrt(Var),
    SumTo(Var, Vec<usize>),
    BroadcastTo(Var, Vec<usize>),
    Reshape(Var, Vec<usize>),
    Conv(Var, Var, ConvGeom),
    ConvTranspose(Var, Var, ConvGeom),
    ConvWeight(Var, Var, ConvGeom),
    Concat(Vec<Var>, usize),
    Narrow(Var, usize, usize),
    PadAxis(Var, usize, usize),
}

struct Node<E> {
    value: Tensor<E>,
    op: Op<E>,
    requires_grad: bool,
}

/// Arena of nodes; a fresh graph is normally built for every training step.
pub struct Graph<E> {
    nodes: RefCell<Vec<Node<E>>>,
    recording: Cell<bool>,
}

impl<E: Element> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Graph<E> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: Cell::new(true),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<E>, op: Op<E>, parents: &[Var]) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad =
            self.recording.get() && parents.iter().any(|p| nodes[p.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    /// Leaf whose gradient can be requested.
    pub fn variable(&self, value: Tensor<E>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(nodes.len() - 1)
    }

    pub fn constant(&self, value: Tensor<E>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(nodes.len() - 1)
    }

    pub fn scalar(&self, value: E) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// Same value, cut from the graph.
    pub fn detach(&self, v: Var) -> Var {
        self.constant(self.value(v))
    }

    pub fn value(&self, v: Var) -> Tensor<E> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn item(&self, v: Var) -> E {
        self.nodes.borrow()[v.0].value.item()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    fn unary(&self, a: Var, op: Op<E>, f: impl Fn(&Tensor<E>) -> Tensor<E>) -> Var {
        let value = f(&self.nodes.borrow()[a.0].value);
        self.push(value, op, &[a])
    }

    fn binary(&self, a: Var, b: Var, op: Op<E>, f: impl Fn(&Tensor<E>, &Tensor<E>) -> Tensor<E>) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            f(&nodes[a.0].value, &nodes[b.0].value)
        };
        self.push(value, op, &[a, b])
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |x, y| x.zip_map(y, |p, q| p + q))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |x, y| x.zip_map(y, |p, q| p - q))
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |x, y| x.zip_map(y, |p, q| p * q))
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Div(a, b), |x, y| x.zip_map(y, |p, q| p / q))
    }

    pub fn neg(&self, a: Var) -> Var {
        self.unary(a, Op::Neg(a), |x| x.map(|v| -v))
    }

    pub fn scale(&self, a: Var, c: E) -> Var {
        self.unary(a, Op::Scale(a, c), |x| x.map(|v| v * c))
    }

    pub fn add_scalar(&self, a: Var, c: E) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x.map(|v| v + c))
    }

    pub fn mul_const(&self, a: Var, c: Tensor<E>) -> Var {
        let value = self.nodes.borrow()[a.0].value.zip_map(&c, |p, q| p * q);
        self.push(value, Op::MulConst(a, c), &[a])
    }

    pub fn square(&self, a: Var) -> Var {
        self.mul(a, a)
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), |x| x.map(|v| v.tanh()))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), |x| {
            x.map(|v| {
                // split by sign so exp never overflows
                if v >= E::zero() {
                    E::one() / (E::one() + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (E::one() + e)
                }
            })
        })
    }

    pub fn log(&self, a: Var) -> Var {
        self.unary(a, Op::Log(a), |x| x.map(|v| v.ln()))
    }

    pub fn sqrt(&self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), |x| x.map(|v| v.sqrt()))
    }

    /// `max(a, floor)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&self, a: Var, floor: E) -> Var {
        let mask = self.nodes.borrow()[a.0]
            .value
            .map(|v| if v > floor { E::one() } else { E::zero() });
        let value = self.nodes.borrow()[a.0].value.map(|v| v.max(floor));
        self.push(value, Op::MulConst(a, mask), &[a])
    }

    /// `x` for `x > 0`, `slope * x` otherwise. `slope = 0` gives ReLU.
    pub fn leaky_relu(&self, a: Var, slope: E) -> Var {
        let mask = self.nodes.borrow()[a.0]
            .value
            .map(|v| if v > E::zero() { E::one() } else { slope });
        self.mul_const(a, mask)
    }

    pub fn relu(&self, a: Var) -> Var {
        self.leaky_relu(a, E::zero())
    }

    pub fn abs(&self, a: Var) -> Var {
        let sign = self.nodes.borrow()[a.0].value.map(|v| {
            if v > E::zero() {
                E::one()
            } else if v < E::zero() {
                -E::one()
            } else {
                E::zero()
            }
        });
        self.mul_const(a, sign)
    }

    pub fn sum_to(&self, a: Var, shape: &[usize]) -> Var {
        let src = self.shape(a);
        self.unary(a, Op::SumTo(a, src), |x| x.sum_to(shape))
    }

    pub fn broadcast_to(&self, a: Var, shape: &[usize]) -> Var {
        let src = self.shape(a);
        if src == shape {
            return a;
        }
        self.unary(a, Op::BroadcastTo(a, src), |x| x.broadcast_to(shape))
    }

    pub fn sum(&self, a: Var) -> Var {
        self.sum_to(a, &[])
    }

    pub fn mean(&self, a: Var) -> Var {
        let n = numel(&self.shape(a));
        let s = self.sum(a);
        self.scale(s, E::one() / E::from_f64(n as f64))
    }

    /// Mean over the dimensions where `shape` is 1 (kept with size 1).
    pub fn mean_to(&self, a: Var, shape: &[usize]) -> Var {
        let factor = numel(&self.shape(a)) / numel(shape);
        let s = self.sum_to(a, shape);
        self.scale(s, E::one() / E::from_f64(factor as f64))
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Var {
        let src = self.shape(a);
        self.unary(a, Op::Reshape(a, src), |x| x.reshape(shape))
    }

    pub fn conv2d(&self, x: Var, w: Var, geom: ConvGeom) -> Var {
        self.binary(x, w, Op::Conv(x, w, geom), |xv, wv| conv::conv2d(xv, wv, geom))
    }

    /// Transposed convolution of `y` with a `[Cy, Cout, kh, kw]` weight.
    /// `out_hw` picks the output size, which the stride leaves ambiguous.
    pub fn conv_transpose2d(&self, y: Var, w: Var, geom: ConvGeom, out_hw: (usize, usize)) -> Var {
        self.binary(y, w, Op::ConvTranspose(y, w, geom), |yv, wv| {
            conv::conv2d_transpose(yv, wv, geom, out_hw)
        })
    }

    fn conv_weight(&self, x: Var, y: Var, geom: ConvGeom, kernel: (usize, usize)) -> Var {
        self.binary(x, y, Op::ConvWeight(x, y, geom), |xv, yv| {
            conv::conv2d_weight(xv, yv, geom, kernel)
        })
    }

    pub fn concat(&self, parts: &[Var], axis: usize) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let refs: Vec<&Tensor<E>> = parts.iter().map(|p| &nodes[p.0].value).collect();
            Tensor::concat(&refs, axis)
        };
        self.push(value, Op::Concat(parts.to_vec(), axis), parts)
    }

    pub fn narrow(&self, a: Var, axis: usize, start: usize, len: usize) -> Var {
        self.unary(a, Op::Narrow(a, axis, start), |x| x.narrow(axis, start, len))
    }

    fn pad_axis(&self, a: Var, axis: usize, start: usize, full: usize) -> Var {
        self.unary(a, Op::PadAxis(a, axis, start), |x| x.pad_axis(axis, start, full))
    }

    fn accumulate(&self, slot: &mut Option<Var>, g: Var) {
        *slot = Some(match *slot {
            Some(prev) => self.add(prev, g),
            None => g,
        });
    }

    /// Gradients of the scalar `output` with respect to each of `wrt`.
    ///
    /// `None` means `output` does not depend differentiably on that input.
    /// With `create_graph` the returned gradients are themselves
    /// differentiable; otherwise they are constants.
    pub fn grad(&self, output: Var, wrt: &[Var], create_graph: bool) -> Vec<Option<Var>> {
        assert_eq!(
            numel(&self.shape(output)),
            1,
            "grad() needs a scalar output, got shape {:?}",
            self.shape(output)
        );
        let mut grads: Vec<Option<Var>> = vec![None; output.0 + 1];
        if !self.requires_grad(output) {
            return vec![None; wrt.len()];
        }

        let saved = self.recording.replace(create_graph);
        let seed_shape = self.shape(output);
        grads[output.0] = Some(self.constant(Tensor::ones(&seed_shape)));

        for id in (0..=output.0).rev() {
            let Some(gy) = grads[id] else { continue };
            let op = {
                let nodes = self.nodes.borrow();
                if !nodes[id].requires_grad {
                    continue;
                }
                nodes[id].op.clone()
            };
            for (parent, g) in self.backward_rule(Var(id), &op, gy) {
                self.accumulate(&mut grads[parent.0], g);
            }
        }
        self.recording.set(saved);

        wrt.iter()
            .map(|v| grads.get(v.0).copied().flatten())
            .collect()
    }

    /// Parent contributions of one node; parents that do not require a
    /// gradient are skipped so their (possibly expensive) rule never runs.
    fn backward_rule(&self, this: Var, op: &Op<E>, gy: Var) -> Vec<(Var, Var)> {
        let needs = |v: Var| self.requires_grad(v);
        let mut out = Vec::with_capacity(2);
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if needs(*a) {
                    out.push((*a, gy));
                }
                if needs(*b) {
                    out.push((*b, gy));
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    out.push((*a, gy));
                }
                if needs(*b) {
                    out.push((*b, self.neg(gy)));
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    out.push((*a, self.mul(gy, *b)));
                }
                if needs(*b) {
                    out.push((*b, self.mul(gy, *a)));
                }
            }
            Op::Div(a, b) => {
                if needs(*a) {
                    out.push((*a, self.div(gy, *b)));
                }
                if needs(*b) {
                    let q = self.div(this, *b);
                    let t = self.mul(gy, q);
                    out.push((*b, self.neg(t)));
                }
            }
            Op::Neg(a) => out.push((*a, self.neg(gy))),
            Op::Scale(a, c) => out.push((*a, self.scale(gy, *c))),
            Op::AddScalar(a) => out.push((*a, gy)),
            Op::MulConst(a, c) => out.push((*a, self.mul_const(gy, c.clone()))),
            Op::Tanh(a) => {
                let y2 = self.square(this);
                let d = self.add_scalar(self.neg(y2), E::one());
                out.push((*a, self.mul(gy, d)));
            }
            Op::Sigmoid(a) => {
                let one_minus = self.add_scalar(self.neg(this), E::one());
                let d = self.mul(this, one_minus);
                out.push((*a, self.mul(gy, d)));
            }
            Op::Log(a) => out.push((*a, self.div(gy, *a))),
            Op::Sqrt(a) => {
                let half = self.scale(gy, E::from_f64(0.5));
                out.push((*a, self.div(half, this)));
            }
            Op::SumTo(a, src) => out.push((*a, self.broadcast_to(gy, src))),
            Op::BroadcastTo(a, src) => out.push((*a, self.sum_to(gy, src))),
            Op::Reshape(a, src) => out.push((*a, self.reshape(gy, src))),
            Op::Conv(x, w, geom) => {
                if needs(*x) {
                    let s = self.shape(*x);
                    out.push((*x, self.conv_transpose2d(gy, *w, *geom, (s[2], s[3]))));
                }
                if needs(*w) {
                    let s = self.shape(*w);
                    out.push((*w, self.conv_weight(*x, gy, *geom, (s[2], s[3]))));
                }
            }
            Op::ConvTranspose(y, w, geom) => {
                if needs(*y) {
                    out.push((*y, self.conv2d(gy, *w, *geom)));
                }
                if needs(*w) {
                    let s = self.shape(*w);
                    out.push((*w, self.conv_weight(gy, *y, *geom, (s[2], s[3]))));
                }
            }
            Op::ConvWeight(x, y, geom) => {
                if needs(*x) {
                    let s = self.shape(*x);
                    out.push((*x, self.conv_transpose2d(*y, gy, *geom, (s[2], s[3]))));
                }
                if needs(*y) {
                    out.push((*y, self.conv2d(*x, gy, *geom)));
                }
            }
            Op::Concat(parts, axis) => {
                let mut start = 0;
                for p in parts {
                    let len = self.shape(*p)[*axis];
                    if needs(*p) {
                        out.push((*p, self.narrow(gy, *axis, start, len)));
                    }
                    start += len;
                }
            }
            Op::Narrow(a, axis, start) => {
                let full = self.shape(*a)[*axis];
                out.push((*a, self.pad_axis(gy, *axis, *start, full)));
            }
            Op::PadAxis(a, axis, start) => {
                let len = self.shape(*a)[*axis];
                out.push((*a, self.narrow(gy, *axis, *start, len)));
            }
        }
        out
    }
}
