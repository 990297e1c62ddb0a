//! A small reverse-mode automatic differentiation engine over [`ndarray`]
//! tensors.
//!
//! The engine is deliberately minimal: a [`Tensor`] wraps an immutable value
//! plus an optional backward closure, graphs are plain `Rc` DAGs, and
//! `backward()` walks the tape in reverse creation order. Every operation
//! needed by the editing networks lives here or in the sibling submodules
//! (`conv`, `sample`, `norm`). All ops are generic over [`Scalar`] so that
//! gradient checks can run in `f64` while training runs in `f32`.
//!
//! Reductions accumulate in `f64` regardless of the scalar type; this keeps
//! loss values stable enough to compare against hand-computed constants.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use ndarray::{ArrayD, Axis, IxDyn, Slice};

pub mod conv;
pub mod gradcheck;
pub mod norm;
pub mod sample;

/// Element type for tensors. Implemented for `f32` and `f64`.
pub trait Scalar:
    num_traits::Float
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + Send
    + Sync
    + fmt::Debug
    + fmt::Display
    + 'static
{
    fn from_fp(x: f64) -> Self;
    fn fp(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_fp(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn fp(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_fp(x: f64) -> Self {
        x
    }
    #[inline]
    fn fp(self) -> f64 {
        self
    }
}

thread_local! {
    static NEXT_ID: RefCell<u64> = const { RefCell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let mut c = c.borrow_mut();
        *c += 1;
        *c
    })
}

type BackwardFn<S> = Box<dyn Fn(&ArrayD<S>)>;

pub(crate) struct Node<S: Scalar> {
    id: u64,
    value: Rc<ArrayD<S>>,
    grad: RefCell<Option<ArrayD<S>>>,
    requires_grad: bool,
    parents: Vec<Tensor<S>>,
    backward: Option<BackwardFn<S>>,
}

/// A value in the computation graph. Cloning is cheap (shared `Rc`).
#[derive(Clone)]
pub struct Tensor<S: Scalar>(Rc<Node<S>>);

impl<S: Scalar> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor(id={}, shape={:?}, requires_grad={})",
            self.0.id,
            self.shape(),
            self.0.requires_grad
        )
    }
}

impl<S: Scalar> Tensor<S> {
    /// Leaf tensor that does not track gradients.
    pub fn constant(value: ArrayD<S>) -> Self {
        Self::new_leaf(Rc::new(value), false)
    }

    /// Leaf tensor that accumulates gradients (a trainable parameter or an
    /// input under a gradient check).
    pub fn variable(value: ArrayD<S>) -> Self {
        Self::new_leaf(Rc::new(value), true)
    }

    pub fn from_shared(value: Rc<ArrayD<S>>, requires_grad: bool) -> Self {
        Self::new_leaf(value, requires_grad)
    }

    fn new_leaf(value: Rc<ArrayD<S>>, requires_grad: bool) -> Self {
        Tensor(Rc::new(Node {
            id: next_id(),
            value,
            grad: RefCell::new(None),
            requires_grad,
            parents: Vec::new(),
            backward: None,
        }))
    }

    pub(crate) fn from_op(
        value: ArrayD<S>,
        parents: Vec<Tensor<S>>,
        backward: BackwardFn<S>,
    ) -> Self {
        let requires_grad = parents.iter().any(|p| p.0.requires_grad);
        Tensor(Rc::new(Node {
            id: next_id(),
            value: Rc::new(value),
            grad: RefCell::new(None),
            requires_grad,
            parents,
            backward: if requires_grad { Some(backward) } else { None },
        }))
    }

    pub fn scalar(x: S) -> Self {
        Self::constant(ArrayD::from_elem(IxDyn(&[]), x))
    }

    pub fn value(&self) -> &ArrayD<S> {
        &self.0.value
    }

    pub fn shared_value(&self) -> Rc<ArrayD<S>> {
        Rc::clone(&self.0.value)
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn len(&self) -> usize {
        self.0.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.value.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// The scalar value of a 0-d (or single-element) tensor.
    pub fn item(&self) -> S {
        debug_assert_eq!(self.len(), 1, "item() on non-scalar tensor");
        *self.0.value.iter().next().expect("empty tensor")
    }

    /// Gradient accumulated by the last `backward()` call, if any.
    pub fn grad(&self) -> Option<ArrayD<S>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, g: ArrayD<S>) {
        if !self.0.requires_grad {
            return;
        }
        debug_assert_eq!(
            g.shape(),
            self.shape(),
            "gradient shape mismatch in accumulate_grad"
        );
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => *acc = &*acc + &g,
            None => *slot = Some(g),
        }
    }

    /// Cuts the graph: same value, no gradient flow to ancestors.
    pub fn detach(&self) -> Tensor<S> {
        Self::new_leaf(Rc::clone(&self.0.value), false)
    }

    /// Reverse-mode sweep from a scalar output. Gradients accumulate into
    /// every reachable tensor with `requires_grad`.
    pub fn backward(&self) {
        assert_eq!(self.len(), 1, "backward() requires a scalar output");
        let seed = ArrayD::from_elem(self.0.value.raw_dim(), S::one());
        self.backward_with(seed);
    }

    pub fn backward_with(&self, seed: ArrayD<S>) {
        // Collect the reachable subgraph, then replay in reverse id order.
        let mut visited = std::collections::HashSet::new();
        let mut nodes: Vec<Tensor<S>> = Vec::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !t.0.requires_grad || !visited.insert(t.0.id) {
                continue;
            }
            for p in &t.0.parents {
                stack.push(p.clone());
            }
            nodes.push(t);
        }
        nodes.sort_by_key(|n| std::cmp::Reverse(n.0.id));
        self.accumulate_grad(seed);
        for node in &nodes {
            let grad = node.0.grad.borrow().clone();
            if let (Some(g), Some(back)) = (grad, node.0.backward.as_ref()) {
                back(&g);
            }
        }
    }
}

/// Broadcast two shapes NumPy-style.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let n = a.len().max(b.len());
    let mut out = vec![0usize; n];
    for i in 0..n {
        let da = if i < n - a.len() { 1 } else { a[i - (n - a.len())] };
        let db = if i < n - b.len() { 1 } else { b[i - (n - b.len())] };
        assert!(
            da == db || da == 1 || db == 1,
            "incompatible broadcast shapes {a:?} vs {b:?}"
        );
        out[i] = da.max(db);
    }
    out
}

/// Sum `g` down to `target` shape (reverse of broadcasting).
pub(crate) fn unbroadcast<S: Scalar>(g: &ArrayD<S>, target: &[usize]) -> ArrayD<S> {
    let mut out = g.clone();
    while out.ndim() > target.len() {
        out = out.sum_axis(Axis(0));
    }
    for (ax, (&od, &td)) in out.shape().to_vec().iter().zip(target.iter()).enumerate() {
        if td == 1 && od > 1 {
            out = out.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
    }
    out
}

fn broadcast_to<S: Scalar>(a: &ArrayD<S>, shape: &[usize]) -> ArrayD<S> {
    a.broadcast(IxDyn(shape))
        .expect("broadcast_to: incompatible shape")
        .to_owned()
}

macro_rules! binary_op {
    ($name:ident, $fwd:expr, $da:expr, $db:expr) => {
        pub fn $name(&self, other: &Tensor<S>) -> Tensor<S> {
            let shape = broadcast_shape(self.shape(), other.shape());
            let av = broadcast_to(self.value(), &shape);
            let bv = broadcast_to(other.value(), &shape);
            let value = $fwd(&av, &bv);
            let a = self.clone();
            let b = other.clone();
            Tensor::from_op(
                value,
                vec![self.clone(), other.clone()],
                Box::new(move |g: &ArrayD<S>| {
                    if a.requires_grad() {
                        let ga: ArrayD<S> = $da(g, &av, &bv);
                        a.accumulate_grad(unbroadcast(&ga, a.shape()));
                    }
                    if b.requires_grad() {
                        let gb: ArrayD<S> = $db(g, &av, &bv);
                        b.accumulate_grad(unbroadcast(&gb, b.shape()));
                    }
                }),
            )
        }
    };
}

macro_rules! unary_op {
    ($name:ident, $fwd:expr, $dx:expr) => {
        pub fn $name(&self) -> Tensor<S> {
            let xv = self.shared_value();
            let value: ArrayD<S> = $fwd(&*xv);
            let yv = Rc::new(value.clone());
            let x = self.clone();
            let yv2 = Rc::clone(&yv);
            Tensor::from_op(
                value,
                vec![self.clone()],
                Box::new(move |g: &ArrayD<S>| {
                    let gx: ArrayD<S> = $dx(g, &*xv, &*yv2);
                    x.accumulate_grad(gx);
                }),
            )
        }
    };
}

impl<S: Scalar> Tensor<S> {
    binary_op!(add, |a: &ArrayD<S>, b: &ArrayD<S>| a + b,
        |g: &ArrayD<S>, _a: &ArrayD<S>, _b: &ArrayD<S>| g.clone(),
        |g: &ArrayD<S>, _a: &ArrayD<S>, _b: &ArrayD<S>| g.clone());
    binary_op!(sub, |a: &ArrayD<S>, b: &ArrayD<S>| a - b,
        |g: &ArrayD<S>, _a: &ArrayD<S>, _b: &ArrayD<S>| g.clone(),
        |g: &ArrayD<S>, _a: &ArrayD<S>, _b: &ArrayD<S>| g.mapv(|v| -v));
    binary_op!(mul, |a: &ArrayD<S>, b: &ArrayD<S>| a * b,
        |g: &ArrayD<S>, _a: &ArrayD<S>, b: &ArrayD<S>| g * b,
        |g: &ArrayD<S>, a: &ArrayD<S>, _b: &ArrayD<S>| g * a);
    binary_op!(div, |a: &ArrayD<S>, b: &ArrayD<S>| a / b,
        |g: &ArrayD<S>, _a: &ArrayD<S>, b: &ArrayD<S>| g / b,
        |g: &ArrayD<S>, a: &ArrayD<S>, b: &ArrayD<S>| {
            let mut out = g * a;
            out.zip_mut_with(b, |o, &bv| *o = -*o / (bv * bv));
            out
        });

    unary_op!(neg, |x: &ArrayD<S>| x.mapv(|v| -v),
        |g: &ArrayD<S>, _x: &ArrayD<S>, _y: &ArrayD<S>| g.mapv(|v| -v));
    unary_op!(relu, |x: &ArrayD<S>| x.mapv(|v| v.max(S::zero())),
        |g: &ArrayD<S>, x: &ArrayD<S>, _y: &ArrayD<S>| {
            let mut out = g.clone();
            out.zip_mut_with(x, |o, &xv| if xv <= S::zero() { *o = S::zero() });
            out
        });
    unary_op!(sigmoid, |x: &ArrayD<S>| x.mapv(sigmoid_scalar),
        |g: &ArrayD<S>, _x: &ArrayD<S>, y: &ArrayD<S>| {
            let mut out = g.clone();
            out.zip_mut_with(y, |o, &yv| *o = *o * yv * (S::one() - yv));
            out
        });
    unary_op!(tanh, |x: &ArrayD<S>| x.mapv(|v| v.tanh()),
        |g: &ArrayD<S>, _x: &ArrayD<S>, y: &ArrayD<S>| {
            let mut out = g.clone();
            out.zip_mut_with(y, |o, &yv| *o = *o * (S::one() - yv * yv));
            out
        });
    unary_op!(exp, |x: &ArrayD<S>| x.mapv(|v| v.exp()),
        |g: &ArrayD<S>, _x: &ArrayD<S>, y: &ArrayD<S>| g * y);
    unary_op!(ln, |x: &ArrayD<S>| x.mapv(|v| v.ln()),
        |g: &ArrayD<S>, x: &ArrayD<S>, _y: &ArrayD<S>| g / x);
    unary_op!(abs, |x: &ArrayD<S>| x.mapv(|v| v.abs()),
        |g: &ArrayD<S>, x: &ArrayD<S>, _y: &ArrayD<S>| {
            let mut out = g.clone();
            out.zip_mut_with(x, |o, &xv| {
                *o = if xv > S::zero() { *o } else if xv < S::zero() { -*o } else { S::zero() }
            });
            out
        });
    unary_op!(sqr, |x: &ArrayD<S>| x.mapv(|v| v * v),
        |g: &ArrayD<S>, x: &ArrayD<S>, _y: &ArrayD<S>| {
            let two = S::from_fp(2.0);
            let mut out = g.clone();
            out.zip_mut_with(x, |o, &xv| *o = *o * two * xv);
            out
        });
    unary_op!(sqrt, |x: &ArrayD<S>| x.mapv(|v| v.sqrt()),
        |g: &ArrayD<S>, _x: &ArrayD<S>, y: &ArrayD<S>| {
            let half = S::from_fp(0.5);
            let mut out = g.clone();
            out.zip_mut_with(y, |o, &yv| *o = *o * half / yv);
            out
        });
    // softplus(x) = ln(1 + e^x), computed stably; used by the GAN losses.
    unary_op!(softplus, |x: &ArrayD<S>| x.mapv(softplus_scalar),
        |g: &ArrayD<S>, x: &ArrayD<S>, _y: &ArrayD<S>| {
            let mut out = g.clone();
            out.zip_mut_with(x, |o, &xv| *o = *o * sigmoid_scalar(xv));
            out
        });

    pub fn leaky_relu(&self, slope: f64) -> Tensor<S> {
        let s = S::from_fp(slope);
        let xv = self.shared_value();
        let value = xv.mapv(|v| if v > S::zero() { v } else { v * s });
        let x = self.clone();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g| {
                let mut out = g.clone();
                out.zip_mut_with(&xv, |o, &xv| {
                    if xv <= S::zero() {
                        *o = *o * s
                    }
                });
                x.accumulate_grad(out);
            }),
        )
    }

    pub fn scale(&self, c: f64) -> Tensor<S> {
        let cs = S::from_fp(c);
        let value = self.value() * cs;
        let x = self.clone();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g| x.accumulate_grad(g * cs)),
        )
    }

    pub fn add_scalar(&self, c: f64) -> Tensor<S> {
        let cs = S::from_fp(c);
        let value = self.value() + cs;
        let x = self.clone();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g| x.accumulate_grad(g.clone())),
        )
    }

    /// Sum of all elements, accumulated in f64. Returns a 0-d tensor.
    pub fn sum(&self) -> Tensor<S> {
        let total: f64 = self.value().iter().map(|v| v.fp()).sum();
        let value = ArrayD::from_elem(IxDyn(&[]), S::from_fp(total));
        let x = self.clone();
        let shape: Vec<usize> = self.shape().to_vec();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g| {
                let gs = *g.iter().next().expect("scalar grad");
                x.accumulate_grad(ArrayD::from_elem(IxDyn(&shape), gs));
            }),
        )
    }

    /// Mean of all elements, accumulated in f64. Returns a 0-d tensor.
    pub fn mean(&self) -> Tensor<S> {
        let n = self.len().max(1);
        self.sum().scale(1.0 / n as f64)
    }

    /// Sum along one axis, keeping that axis with size 1.
    pub fn sum_axis_keep(&self, axis: usize) -> Tensor<S> {
        let value = self
            .value()
            .map_axis(Axis(axis), |lane| {
                S::from_fp(lane.iter().map(|v| v.fp()).sum())
            })
            .insert_axis(Axis(axis));
        let x = self.clone();
        let shape: Vec<usize> = self.shape().to_vec();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g| {
                x.accumulate_grad(broadcast_to(g, &shape));
            }),
        )
    }

    pub fn mean_axis_keep(&self, axis: usize) -> Tensor<S> {
        let n = self.shape()[axis].max(1);
        self.sum_axis_keep(axis).scale(1.0 / n as f64)
    }

    /// 2-D matrix product.
    pub fn matmul(&self, other: &Tensor<S>) -> Tensor<S> {
        assert_eq!(self.shape().len(), 2, "matmul: lhs must be 2-d");
        assert_eq!(other.shape().len(), 2, "matmul: rhs must be 2-d");
        let av = self.shared_value();
        let bv = other.shared_value();
        let a2 = av.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let b2 = bv.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let value = a2.dot(&b2).into_dyn();
        let a = self.clone();
        let b = other.clone();
        Tensor::from_op(
            value,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                let g2 = g.view().into_dimensionality::<ndarray::Ix2>().unwrap();
                if a.requires_grad() {
                    let b2 = bv.view().into_dimensionality::<ndarray::Ix2>().unwrap();
                    a.accumulate_grad(g2.dot(&b2.t()).into_dyn());
                }
                if b.requires_grad() {
                    let a2 = av.view().into_dimensionality::<ndarray::Ix2>().unwrap();
                    b.accumulate_grad(a2.t().dot(&g2).into_dyn());
                }
            }),
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor<S> {
        let n: usize = shape.iter().product();
        assert_eq!(n, self.len(), "reshape: element count mismatch");
        let value = self
            .value()
            .to_shape(IxDyn(shape))
            .expect("reshape failed")
            .to_owned();
        let x = self.clone();
        let old: Vec<usize> = self.shape().to_vec();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g| {
                x.accumulate_grad(g.to_shape(IxDyn(&old)).expect("reshape back").to_owned());
            }),
        )
    }

    pub fn permute(&self, axes: &[usize]) -> Tensor<S> {
        let value = self
            .value()
            .view()
            .permuted_axes(axes)
            .to_owned();
        let mut inv = vec![0usize; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inv[a] = i;
        }
        let x = self.clone();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g| {
                x.accumulate_grad(g.view().permuted_axes(&inv[..]).to_owned());
            }),
        )
    }

    /// Concatenate along `axis`.
    pub fn concat(axis: usize, parts: &[Tensor<S>]) -> Tensor<S> {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|p| p.value().view()).collect();
        let value = ndarray::concatenate(Axis(axis), &views).expect("concat shape mismatch");
        let owners: Vec<Tensor<S>> = parts.to_vec();
        let sizes: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        Tensor::from_op(
            value,
            owners.clone(),
            Box::new(move |g| {
                let mut start = 0isize;
                for (t, &sz) in owners.iter().zip(&sizes) {
                    let piece = g
                        .slice_axis(Axis(axis), Slice::from(start..start + sz as isize))
                        .to_owned();
                    t.accumulate_grad(piece);
                    start += sz as isize;
                }
            }),
        )
    }

    /// Slice `[start, end)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, end: usize) -> Tensor<S> {
        let value = self
            .value()
            .slice_axis(Axis(axis), Slice::from(start as isize..end as isize))
            .to_owned();
        let x = self.clone();
        let full: Vec<usize> = self.shape().to_vec();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g| {
                let mut out = ArrayD::zeros(IxDyn(&full));
                out.slice_axis_mut(Axis(axis), Slice::from(start as isize..end as isize))
                    .assign(g);
                x.accumulate_grad(out);
            }),
        )
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Tensor<S> {
        let x = self.value();
        let maxes = x.map_axis(Axis(axis), |lane| {
            lane.iter().cloned().fold(S::neg_infinity(), S::max)
        });
        let mut value = x.clone();
        let maxes = maxes.insert_axis(Axis(axis));
        value.zip_mut_with(&broadcast_to(&maxes.into_dyn(), x.shape()), |v, &m| {
            *v = (*v - m).exp()
        });
        let denom = value
            .map_axis(Axis(axis), |lane| {
                S::from_fp(lane.iter().map(|v| v.fp()).sum::<f64>())
            })
            .insert_axis(Axis(axis))
            .into_dyn();
        value.zip_mut_with(&broadcast_to(&denom, x.shape()), |v, &d| *v = *v / d);
        let y = Rc::new(value.clone());
        let xt = self.clone();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g| {
                // dx = y * (g - sum(g * y, axis))
                let gy = g * &*y;
                let dot = gy
                    .map_axis(Axis(axis), |lane| {
                        S::from_fp(lane.iter().map(|v| v.fp()).sum::<f64>())
                    })
                    .insert_axis(Axis(axis))
                    .into_dyn();
                let mut dx = g - &broadcast_to(&dot, g.shape());
                dx.zip_mut_with(&y, |d, &yv| *d = *d * yv);
                xt.accumulate_grad(dx);
            }),
        )
    }

    /// log(softmax(x)) along `axis`, numerically stable.
    pub fn log_softmax(&self, axis: usize) -> Tensor<S> {
        let x = self.value();
        let maxes = x
            .map_axis(Axis(axis), |lane| {
                lane.iter().cloned().fold(S::neg_infinity(), S::max)
            })
            .insert_axis(Axis(axis))
            .into_dyn();
        let shifted = x - &broadcast_to(&maxes, x.shape());
        let logsum = shifted
            .map_axis(Axis(axis), |lane| {
                S::from_fp(lane.iter().map(|v| v.exp().fp()).sum::<f64>().ln())
            })
            .insert_axis(Axis(axis))
            .into_dyn();
        let value = &shifted - &broadcast_to(&logsum, x.shape());
        let softmax = value.mapv(|v| v.exp());
        let xt = self.clone();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g| {
                // dx = g - softmax * sum(g, axis)
                let gsum = g
                    .map_axis(Axis(axis), |lane| {
                        S::from_fp(lane.iter().map(|v| v.fp()).sum::<f64>())
                    })
                    .insert_axis(Axis(axis))
                    .into_dyn();
                let dx = g - &(&softmax * &broadcast_to(&gsum, g.shape()));
                xt.accumulate_grad(dx);
            }),
        )
    }
}

#[inline]
pub(crate) fn sigmoid_scalar<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

#[inline]
pub(crate) fn softplus_scalar<S: Scalar>(x: S) -> S {
    // ln(1 + e^x) = max(x, 0) + ln(1 + e^{-|x|})
    x.max(S::zero()) + (S::one() + (-x.abs()).exp()).ln()
}

#[cfg(test)]
mod tests {
    use super::gradcheck::check_gradients;
    use super::*;
    use ndarray::{ArrayD, IxDyn};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn rand_array(shape: &[usize], rng: &mut ChaCha12Rng) -> ArrayD<f64> {
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn add_broadcasts_and_reduces_grad() {
        let a = Tensor::variable(ArrayD::from_elem(IxDyn(&[2, 3]), 1.0f64));
        let b = Tensor::variable(ArrayD::from_elem(IxDyn(&[1, 3]), 2.0f64));
        let y = a.add(&b);
        assert_eq!(y.shape(), &[2, 3]);
        y.sum().backward();
        assert_eq!(a.grad().unwrap(), ArrayD::from_elem(IxDyn(&[2, 3]), 1.0));
        assert_eq!(b.grad().unwrap(), ArrayD::from_elem(IxDyn(&[1, 3]), 2.0));
    }

    #[test]
    fn detach_blocks_gradient() {
        let a = Tensor::variable(ArrayD::from_elem(IxDyn(&[4]), 3.0f64));
        let y = a.detach().mul(&a);
        y.sum().backward();
        // Only the non-detached path contributes: d/da (c * a) = c = 3.
        assert_eq!(a.grad().unwrap(), ArrayD::from_elem(IxDyn(&[4]), 3.0));
    }

    #[test]
    fn elementwise_gradients_match_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let a0 = rand_array(&[3, 4], &mut rng);
        let b0 = rand_array(&[3, 4], &mut rng).mapv(|v| v + 2.5); // keep positive for div/ln
        check_gradients(
            &[a0.clone(), b0.clone()],
            |xs| {
                let a = &xs[0];
                let b = &xs[1];
                a.mul(b)
                    .add(&a.div(b))
                    .sub(&a.sigmoid())
                    .add(&b.ln())
                    .add(&a.tanh().sqr())
                    .add(&b.sqrt())
                    .add(&a.softplus())
                    .mean()
            },
            1e-5,
            1e-6,
        );
    }

    #[test]
    fn softmax_rows_sum_to_one_and_grad_checks() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let x0 = rand_array(&[4, 7], &mut rng);
        let x = Tensor::variable(x0.clone());
        let y = x.softmax(1);
        for row in y.value().axis_iter(Axis(0)) {
            let s: f64 = row.sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        check_gradients(
            &[x0.clone()],
            |xs| {
                let w = Tensor::constant(ArrayD::from_shape_fn(IxDyn(&[4, 7]), |ix| {
                    (ix[0] as f64 * 7.0 + ix[1] as f64).sin()
                }));
                xs[0].softmax(1).mul(&w).sum()
            },
            1e-5,
            1e-6,
        );
        check_gradients(&[x0], |xs| xs[0].log_softmax(1).sqr().mean(), 1e-5, 1e-6);
    }

    #[test]
    fn matmul_grad_checks() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let a0 = rand_array(&[3, 5], &mut rng);
        let b0 = rand_array(&[5, 2], &mut rng);
        check_gradients(
            &[a0, b0],
            |xs| xs[0].matmul(&xs[1]).sqr().mean(),
            1e-5,
            1e-6,
        );
    }

    #[test]
    fn concat_narrow_permute_grad_checks() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let a0 = rand_array(&[2, 3, 4], &mut rng);
        let b0 = rand_array(&[2, 1, 4], &mut rng);
        check_gradients(
            &[a0, b0],
            |xs| {
                let c = Tensor::concat(1, &[xs[0].clone(), xs[1].clone()]);
                let n = c.narrow(1, 1, 4);
                n.permute(&[2, 0, 1]).sqr().mean()
            },
            1e-5,
            1e-6,
        );
    }

    #[test]
    fn axis_reductions_grad_check() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let a0 = rand_array(&[3, 4, 2], &mut rng);
        check_gradients(
            &[a0],
            |xs| xs[0].sum_axis_keep(1).sqr().mean_axis_keep(0).sum(),
            1e-5,
            1e-6,
        );
    }

    #[test]
    fn grad_accumulates_across_uses() {
        let a = Tensor::variable(ArrayD::from_elem(IxDyn(&[2]), 2.0f64));
        let y = a.mul(&a).sum(); // y = sum(a^2), dy/da = 2a = 4
        y.backward();
        assert_eq!(a.grad().unwrap(), ArrayD::from_elem(IxDyn(&[2]), 4.0));
    }
}
