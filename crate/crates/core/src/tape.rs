//! Reverse-mode differentiation over the primitives the networks need.
//!
//! Network code is written once against [`Graph`]; [`Eager`] evaluates it
//! directly on tensors, [`Tape`] records it for a single backward sweep.

use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::ops::{self, conv_adjoint, conv_forward, conv_kernel_grad, Geom, Padding};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// The differentiable primitive set.
pub trait Graph<T: Scalar> {
    type Value: Clone;

    fn shape_of(&self, v: &Self::Value) -> Result<Vec<usize>>;
    /// Lifts a tensor that no gradient should flow into.
    fn constant(&self, t: Tensor<T>) -> Self::Value;
    fn conv2d(&self, x: &Self::Value, k: &Self::Value, stride: usize, pad: Padding) -> Result<Self::Value>;
    fn conv2d_transpose(&self, x: &Self::Value, k: &Self::Value, stride: usize) -> Result<Self::Value>;
    fn relu(&self, x: &Self::Value) -> Result<Self::Value>;
    fn add(&self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn sub(&self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn scale(&self, a: &Self::Value, alpha: T) -> Result<Self::Value>;
    fn concat_channels(&self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
}

/// Direct evaluation on tensors.
#[derive(Debug, Clone, Copy, Default)]
pub struct Eager;

impl<T: Scalar> Graph<T> for Eager {
    type Value = Tensor<T>;

    fn shape_of(&self, v: &Tensor<T>) -> Result<Vec<usize>> {
        Ok(v.shape().to_vec())
    }

    fn constant(&self, t: Tensor<T>) -> Tensor<T> {
        t
    }

    fn conv2d(&self, x: &Tensor<T>, k: &Tensor<T>, stride: usize, pad: Padding) -> Result<Tensor<T>> {
        ops::conv2d(x, k, stride, pad)
    }

    fn conv2d_transpose(&self, x: &Tensor<T>, k: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
        ops::conv2d_transpose(x, k, stride)
    }

    fn relu(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(ops::relu(x))
    }

    fn add(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        a.add(b)
    }

    fn sub(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        a.sub(b)
    }

    fn scale(&self, a: &Tensor<T>, alpha: T) -> Result<Tensor<T>> {
        a.scale(alpha)
    }

    fn concat_channels(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        a.concat_channels(b)
    }
}

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Debug)]
enum Step<T> {
    Leaf,
    Conv { x: usize, k: usize, geom: Geom },
    ConvT { x: usize, k: usize, geom: Geom },
    Relu(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Scale(usize, T),
    Concat(usize, usize),
    SumSq(usize),
    MeanSq(usize),
    Dot(usize, Tensor<T>),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    step: Step<T>,
    needs_grad: bool,
    param: bool,
}

/// Single-use record of primitive operations.
///
/// `backward` consumes the tape and replays adjoints in exact reverse
/// recording order.
#[derive(Debug)]
pub struct Tape<T> {
    id: u64,
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    fn push(&self, value: Tensor<T>, step: Step<T>, needs_grad: bool, param: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            step,
            needs_grad,
            param,
        });
        Var {
            tape: self.id,
            idx: nodes.len() - 1,
        }
    }

    fn check(&self, v: &Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.borrow().len() {
            return Err(Error::ForeignValue);
        }
        Ok(v.idx)
    }

    fn needs(&self, idx: usize) -> bool {
        self.nodes.borrow()[idx].needs_grad
    }

    /// Differentiable leaf; its gradient is reported by `backward`.
    pub fn param(&self, value: Tensor<T>) -> Var {
        self.push(value, Step::Leaf, true, true)
    }

    /// Constant leaf; no gradient flows into it.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.push(value, Step::Leaf, false, false)
    }

    pub fn value(&self, v: &Var) -> Result<Tensor<T>> {
        let idx = self.check(v)?;
        Ok(self.nodes.borrow()[idx].value.clone())
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn unary(
        &self,
        x: &Var,
        f: impl FnOnce(&Tensor<T>) -> Result<Tensor<T>>,
        step: impl FnOnce(usize) -> Step<T>,
    ) -> Result<Var> {
        let xi = self.check(x)?;
        let value = f(&self.nodes.borrow()[xi].value)?;
        Ok(self.push(value, step(xi), self.needs(xi), false))
    }

    fn binary(
        &self,
        a: &Var,
        b: &Var,
        f: impl FnOnce(&Tensor<T>, &Tensor<T>) -> Result<Tensor<T>>,
        step: impl FnOnce(usize, usize) -> Step<T>,
    ) -> Result<Var> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        let value = {
            let nodes = self.nodes.borrow();
            f(&nodes[ai].value, &nodes[bi].value)?
        };
        let needs = self.needs(ai) || self.needs(bi);
        Ok(self.push(value, step(ai, bi), needs, false))
    }

    /// Scalar `||a||^2`.
    pub fn sum_sq(&self, a: &Var) -> Result<Var> {
        self.unary(a, |t| Tensor::from_vec(&[1], vec![t.norm_sq()]), Step::SumSq)
    }

    /// Scalar `||a||^2 / len(a)`.
    pub fn mean_sq(&self, a: &Var) -> Result<Var> {
        self.unary(
            a,
            |t| Tensor::from_vec(&[1], vec![t.norm_sq() / T::lit(t.len() as f64)]),
            Step::MeanSq,
        )
    }

    /// Scalar `sum(a ⊙ c)` for a constant `c`.
    pub fn dot_const(&self, a: &Var, c: &Tensor<T>) -> Result<Var> {
        let c = c.clone();
        let ai = self.check(a)?;
        let value = {
            let nodes = self.nodes.borrow();
            Tensor::from_vec(&[1], vec![nodes[ai].value.inner(&c)?])?
        };
        Ok(self.push(value, Step::Dot(ai, c), self.needs(ai), false))
    }

    /// Consumes the tape and returns `d loss / d param` for every param leaf.
    pub fn backward(self, loss: &Var) -> Result<Gradients<T>> {
        let li = self.check(loss)?;
        let tape_id = self.id;
        let nodes = self.nodes.into_inner();
        if nodes[li].value.len() != 1 {
            return Err(Error::NotScalar(nodes[li].value.len()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[li] = Some(vec![T::one()]);

        fn acc<T: Scalar>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
            match slot {
                Some(s) => s.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                None => *slot = Some(g),
            }
        }

        for idx in (0..=li).rev() {
            let node = &nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.step, Step::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let need = |i: usize| nodes[i].needs_grad;
            match &node.step {
                Step::Leaf => unreachable!(),
                Step::Conv { x, k, geom } => {
                    if need(*k) {
                        let dk = conv_kernel_grad(nodes[*x].value.data(), &g, geom);
                        acc(&mut grads[*k], dk);
                    }
                    if need(*x) {
                        let dx = conv_adjoint(&g, nodes[*k].value.data(), geom);
                        acc(&mut grads[*x], dx);
                    }
                }
                Step::ConvT { x, k, geom } => {
                    if need(*k) {
                        let dk = conv_kernel_grad(&g, nodes[*x].value.data(), geom);
                        acc(&mut grads[*k], dk);
                    }
                    if need(*x) {
                        let dx = conv_forward(&g, nodes[*k].value.data(), geom);
                        acc(&mut grads[*x], dx);
                    }
                }
                Step::Relu(x) => {
                    let dx = ops::relu_mask(nodes[*x].value.data(), &g);
                    acc(&mut grads[*x], dx);
                }
                Step::Add(a, b) => {
                    if need(*a) {
                        acc(&mut grads[*a], g.clone());
                    }
                    if need(*b) {
                        acc(&mut grads[*b], g);
                    }
                }
                Step::Sub(a, b) => {
                    if need(*b) {
                        acc(&mut grads[*b], g.iter().map(|&v| -v).collect());
                    }
                    if need(*a) {
                        acc(&mut grads[*a], g);
                    }
                }
                Step::Scale(a, alpha) => {
                    acc(&mut grads[*a], g.iter().map(|&v| v * *alpha).collect());
                }
                Step::Concat(a, b) => {
                    let split = nodes[*a].value.len();
                    if need(*a) {
                        acc(&mut grads[*a], g[..split].to_vec());
                    }
                    if need(*b) {
                        acc(&mut grads[*b], g[split..].to_vec());
                    }
                }
                Step::SumSq(a) => {
                    let two_g = T::lit(2.0) * g[0];
                    let d = nodes[*a].value.data().iter().map(|&v| two_g * v).collect();
                    acc(&mut grads[*a], d);
                }
                Step::MeanSq(a) => {
                    let v = &nodes[*a].value;
                    let s = T::lit(2.0) * g[0] / T::lit(v.len() as f64);
                    acc(&mut grads[*a], v.data().iter().map(|&x| s * x).collect());
                }
                Step::Dot(a, c) => {
                    acc(&mut grads[*a], c.data().iter().map(|&x| g[0] * x).collect());
                }
            }
        }

        let mut out = Vec::with_capacity(nodes.len());
        for (idx, node) in nodes.iter().enumerate() {
            let g = if node.param {
                let data = grads[idx].take().unwrap_or_else(|| vec![T::zero(); node.value.len()]);
                Some(Tensor::from_raw(node.value.shape().to_vec(), data).finite("backward")?)
            } else {
                None
            };
            out.push(g);
        }
        Ok(Gradients {
            tape: tape_id,
            grads: out,
        })
    }
}

/// Gradients of a scalar loss with respect to every param leaf of a tape.
#[derive(Debug)]
pub struct Gradients<T> {
    tape: u64,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for a param leaf; `ForeignValue` for anything else.
    pub fn wrt(&self, v: &Var) -> Result<&Tensor<T>> {
        if v.tape != self.tape {
            return Err(Error::ForeignValue);
        }
        self.grads
            .get(v.idx)
            .and_then(|g| g.as_ref())
            .ok_or(Error::ForeignValue)
    }

    pub fn take(&mut self, v: &Var) -> Result<Tensor<T>> {
        if v.tape != self.tape {
            return Err(Error::ForeignValue);
        }
        self.grads
            .get_mut(v.idx)
            .and_then(|g| g.take())
            .ok_or(Error::ForeignValue)
    }
}

impl<T: Scalar> Graph<T> for Tape<T> {
    type Value = Var;

    fn shape_of(&self, v: &Var) -> Result<Vec<usize>> {
        let idx = self.check(v)?;
        Ok(self.nodes.borrow()[idx].value.shape().to_vec())
    }

    fn constant(&self, t: Tensor<T>) -> Var {
        Tape::constant(self, t)
    }

    fn conv2d(&self, x: &Var, k: &Var, stride: usize, pad: Padding) -> Result<Var> {
        let (xi, ki) = (self.check(x)?, self.check(k)?);
        let (value, geom) = {
            let nodes = self.nodes.borrow();
            let geom = Geom::forward(nodes[xi].value.shape(), nodes[ki].value.shape(), stride, pad)?;
            let y = conv_forward(nodes[xi].value.data(), nodes[ki].value.data(), &geom);
            (
                Tensor::from_raw(vec![geom.o, geom.oh, geom.ow], y).finite("conv2d")?,
                geom,
            )
        };
        let needs = self.needs(xi) || self.needs(ki);
        Ok(self.push(value, Step::Conv { x: xi, k: ki, geom }, needs, false))
    }

    fn conv2d_transpose(&self, x: &Var, k: &Var, stride: usize) -> Result<Var> {
        let (xi, ki) = (self.check(x)?, self.check(k)?);
        let (value, geom) = {
            let nodes = self.nodes.borrow();
            let geom = Geom::transpose(nodes[xi].value.shape(), nodes[ki].value.shape(), stride, Padding::Valid)?;
            let y = conv_adjoint(nodes[xi].value.data(), nodes[ki].value.data(), &geom);
            (
                Tensor::from_raw(vec![geom.c, geom.h, geom.w], y).finite("conv2d_transpose")?,
                geom,
            )
        };
        let needs = self.needs(xi) || self.needs(ki);
        Ok(self.push(value, Step::ConvT { x: xi, k: ki, geom }, needs, false))
    }

    fn relu(&self, x: &Var) -> Result<Var> {
        self.unary(x, |t| Ok(ops::relu(t)), Step::Relu)
    }

    fn add(&self, a: &Var, b: &Var) -> Result<Var> {
        self.binary(a, b, |x, y| x.add(y), Step::Add)
    }

    fn sub(&self, a: &Var, b: &Var) -> Result<Var> {
        self.binary(a, b, |x, y| x.sub(y), Step::Sub)
    }

    fn scale(&self, a: &Var, alpha: T) -> Result<Var> {
        self.unary(a, |t| t.scale(alpha), |i| Step::Scale(i, alpha))
    }

    fn concat_channels(&self, a: &Var, b: &Var) -> Result<Var> {
        self.binary(a, b, |x, y| x.concat_channels(y), Step::Concat)
    }
}
