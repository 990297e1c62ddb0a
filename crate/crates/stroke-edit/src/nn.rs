//! Neural-network building blocks on top of [`crate::autograd`]: a named
//! parameter store, layer structs, and the Adam optimizer.
//!
//! Layers hold [`ParamId`]s rather than arrays; the arrays live in a
//! [`ParamStore`] so checkpointing and optimization stay centralized. Each
//! forward pass goes through a short-lived [`Graph`] that lazily binds every
//! parameter to a leaf tensor exactly once, letting the optimizer read the
//! accumulated gradients afterwards.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use ndarray::{ArrayD, IxDyn};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{conv, norm, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

pub struct ParamSlot<S: Scalar> {
    pub name: String,
    pub value: Rc<ArrayD<S>>,
    pub m: ArrayD<S>,
    pub v: ArrayD<S>,
}

/// Owns every trainable array of one optimization group.
pub struct ParamStore<S: Scalar> {
    slots: Vec<ParamSlot<S>>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { slots: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<S>) -> ParamId {
        let name = name.into();
        debug_assert!(
            !self.slots.iter().any(|s| s.name == name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.slots.len());
        self.slots.push(ParamSlot {
            name,
            m: ArrayD::zeros(value.raw_dim()),
            v: ArrayD::zeros(value.raw_dim()),
            value: Rc::new(value),
        });
        id
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slot(&self, id: ParamId) -> &ParamSlot<S> {
        &self.slots[id.0]
    }

    pub fn slots(&self) -> impl Iterator<Item = (ParamId, &ParamSlot<S>)> {
        self.slots.iter().enumerate().map(|(i, s)| (ParamId(i), s))
    }

    pub fn value(&self, id: ParamId) -> &ArrayD<S> {
        &self.slots[id.0].value
    }

    pub fn set_moments(&mut self, id: ParamId, m: ArrayD<S>, v: ArrayD<S>) {
        let slot = &mut self.slots[id.0];
        assert_eq!(slot.m.shape(), m.shape(), "moment shape mismatch");
        assert_eq!(slot.v.shape(), v.shape(), "moment shape mismatch");
        slot.m = m;
        slot.v = v;
    }

    pub fn set_value(&mut self, id: ParamId, value: ArrayD<S>) {
        assert_eq!(
            self.slots[id.0].value.shape(),
            value.shape(),
            "set_value shape mismatch for {}",
            self.slots[id.0].name
        );
        self.slots[id.0].value = Rc::new(value);
    }

    pub fn total_elements(&self) -> usize {
        self.slots.iter().map(|s| s.value.len()).sum()
    }
}

/// Per-forward-pass parameter binding. `trainable = false` builds constant
/// leaves (frozen networks still let gradients flow through to their inputs,
/// they just do not accumulate parameter gradients).
pub struct Graph<'a, S: Scalar> {
    store: &'a ParamStore<S>,
    leaves: RefCell<HashMap<usize, Tensor<S>>>,
    trainable: bool,
}

impl<'a, S: Scalar> Graph<'a, S> {
    pub fn new(store: &'a ParamStore<S>, trainable: bool) -> Self {
        Graph {
            store,
            leaves: RefCell::new(HashMap::new()),
            trainable,
        }
    }

    pub fn leaf(&self, id: ParamId) -> Tensor<S> {
        let mut leaves = self.leaves.borrow_mut();
        leaves
            .entry(id.0)
            .or_insert_with(|| {
                Tensor::from_shared(Rc::clone(&self.store.slot(id).value), self.trainable)
            })
            .clone()
    }

    /// Gradients accumulated on the bound leaves (missing/zero grads skipped).
    pub fn grads(&self) -> Vec<(ParamId, ArrayD<S>)> {
        let leaves = self.leaves.borrow();
        let mut out: Vec<(ParamId, ArrayD<S>)> = leaves
            .iter()
            .filter_map(|(&i, t)| t.grad().map(|g| (ParamId(i), g)))
            .collect();
        out.sort_by_key(|(id, _)| id.0);
        out
    }

    /// Gradient for one parameter, if it was bound and received one.
    pub fn grad_of(&self, id: ParamId) -> Option<ArrayD<S>> {
        self.leaves.borrow().get(&id.0).and_then(|t| t.grad())
    }
}

/// Adam with bias correction; hyperparameters per the training config.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
        }
    }

    pub fn step<S: Scalar>(&mut self, store: &mut ParamStore<S>, grads: &[(ParamId, ArrayD<S>)]) {
        self.t += 1;
        let b1 = S::from_fp(self.beta1);
        let b2 = S::from_fp(self.beta2);
        let one = S::one();
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = S::from_fp(self.lr / bc1);
        let vs = S::from_fp(1.0 / bc2);
        let eps = S::from_fp(self.eps);
        for (id, g) in grads {
            let slot = &mut store.slots[id.0];
            debug_assert_eq!(slot.value.shape(), g.shape());
            slot.m.zip_mut_with(g, |m, &gv| *m = b1 * *m + (one - b1) * gv);
            slot.v
                .zip_mut_with(g, |v, &gv| *v = b2 * *v + (one - b2) * gv * gv);
            let value = Rc::make_mut(&mut slot.value);
            ndarray::Zip::from(&mut *value)
                .and(&slot.m)
                .and(&slot.v)
                .for_each(|p, &m, &v| {
                    *p = *p - step * m / ((v * vs).sqrt() + eps);
                });
        }
    }
}

fn normal_array<S: Scalar>(shape: &[usize], std: f64, rng: &mut ChaCha12Rng) -> ArrayD<S> {
    let dist = Normal::new(0.0, std).expect("valid std");
    ArrayD::from_shape_fn(IxDyn(shape), |_| S::from_fp(dist.sample(rng)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    LeakyRelu,
    None,
}

fn apply_act<S: Scalar>(x: Tensor<S>, act: Activation) -> Tensor<S> {
    match act {
        Activation::Relu => x.relu(),
        Activation::LeakyRelu => x.leaky_relu(0.2),
        Activation::None => x,
    }
}

pub struct Conv2d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
        rng: &mut ChaCha12Rng,
    ) -> Self {
        // He-normal for the ReLU family
        let fan_in = (cin * kernel.0 * kernel.1) as f64;
        let std = (2.0 / fan_in).sqrt();
        let w = store.add(
            format!("{name}.weight"),
            normal_array(&[cout, cin, kernel.0, kernel.1], std, rng),
        );
        let b = store.add(format!("{name}.bias"), ArrayD::zeros(IxDyn(&[cout])));
        Conv2d {
            w,
            b: Some(b),
            stride,
            pad,
        }
    }

    pub fn forward<S: Scalar>(&self, g: &Graph<'_, S>, x: &Tensor<S>) -> Tensor<S> {
        let w = g.leaf(self.w);
        let b = self.b.map(|id| g.leaf(id));
        conv::conv2d(x, &w, b.as_ref(), self.stride, self.pad)
    }
}

pub struct InstanceNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl InstanceNorm2d {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, channels: usize) -> Self {
        let gamma = store.add(
            format!("{name}.gamma"),
            ArrayD::from_elem(IxDyn(&[channels]), S::one()),
        );
        let beta = store.add(format!("{name}.beta"), ArrayD::zeros(IxDyn(&[channels])));
        InstanceNorm2d { gamma, beta }
    }

    pub fn forward<S: Scalar>(&self, g: &Graph<'_, S>, x: &Tensor<S>) -> Tensor<S> {
        norm::instance_norm(x, &g.leaf(self.gamma), &g.leaf(self.beta), 1e-5)
    }
}

/// conv -> instance norm -> activation, the standard block in all encoders
/// and decoders here.
pub struct ConvBlock {
    pub conv: Conv2d,
    pub norm: Option<InstanceNorm2d>,
    pub act: Activation,
}

impl ConvBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
        act: Activation,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        ConvBlock {
            conv: Conv2d::new(store, name, cin, cout, kernel, stride, pad, rng),
            norm: Some(InstanceNorm2d::new(store, &format!("{name}.norm"), cout)),
            act,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new_plain<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
        act: Activation,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        ConvBlock {
            conv: Conv2d::new(store, name, cin, cout, kernel, stride, pad, rng),
            norm: None,
            act,
        }
    }

    pub fn forward<S: Scalar>(&self, g: &Graph<'_, S>, x: &Tensor<S>) -> Tensor<S> {
        let mut y = self.conv.forward(g, x);
        if let Some(nrm) = &self.norm {
            y = nrm.forward(g, &y);
        }
        apply_act(y, self.act)
    }
}

/// Two 3x3 conv blocks with an additive skip.
pub struct ResBlock {
    pub c1: ConvBlock,
    pub c2: Conv2d,
    pub n2: InstanceNorm2d,
}

impl ResBlock {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        channels: usize,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        ResBlock {
            c1: ConvBlock::new(
                store,
                &format!("{name}.c1"),
                channels,
                channels,
                (3, 3),
                (1, 1),
                (1, 1),
                Activation::Relu,
                rng,
            ),
            c2: Conv2d::new(
                store,
                &format!("{name}.c2"),
                channels,
                channels,
                (3, 3),
                (1, 1),
                (1, 1),
                rng,
            ),
            n2: InstanceNorm2d::new(store, &format!("{name}.c2.norm"), channels),
        }
    }

    pub fn forward<S: Scalar>(&self, g: &Graph<'_, S>, x: &Tensor<S>) -> Tensor<S> {
        let y = self.c1.forward(g, x);
        let y = self.n2.forward(g, &self.c2.forward(g, &y));
        x.add(&y).relu()
    }
}

pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        cin: usize,
        cout: usize,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let std = (1.0 / cin as f64).sqrt();
        Linear {
            w: store.add(format!("{name}.weight"), normal_array(&[cin, cout], std, rng)),
            b: store.add(format!("{name}.bias"), ArrayD::zeros(IxDyn(&[cout]))),
        }
    }

    /// Zero weights and a caller-chosen bias; used where the initial output
    /// must equal a known constant regardless of the input.
    pub fn new_zero_with_bias<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        cin: usize,
        bias: ArrayD<S>,
    ) -> Self {
        let cout = bias.len();
        Linear {
            w: store.add(format!("{name}.weight"), ArrayD::zeros(IxDyn(&[cin, cout]))),
            b: store.add(format!("{name}.bias"), bias),
        }
    }

    /// `x` is `[B, cin]`; returns `[B, cout]`.
    pub fn forward<S: Scalar>(&self, g: &Graph<'_, S>, x: &Tensor<S>) -> Tensor<S> {
        x.matmul(&g.leaf(self.w)).add(&g.leaf(self.b))
    }
}

pub struct LstmCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let std = (1.0 / hidden as f64).sqrt();
        let mut bias = ArrayD::zeros(IxDyn(&[4 * hidden]));
        // forget-gate bias starts at 1
        for i in hidden..2 * hidden {
            bias[[i]] = S::one();
        }
        LstmCell {
            w_ih: store.add(
                format!("{name}.w_ih"),
                normal_array(&[input, 4 * hidden], std, rng),
            ),
            w_hh: store.add(
                format!("{name}.w_hh"),
                normal_array(&[hidden, 4 * hidden], std, rng),
            ),
            b: store.add(format!("{name}.bias"), bias),
            hidden,
        }
    }

    /// One step: `x` `[B, in]`, state `(h, c)` each `[B, hidden]`.
    pub fn step<S: Scalar>(
        &self,
        g: &Graph<'_, S>,
        x: &Tensor<S>,
        h: &Tensor<S>,
        c: &Tensor<S>,
    ) -> (Tensor<S>, Tensor<S>) {
        let gates = x
            .matmul(&g.leaf(self.w_ih))
            .add(&h.matmul(&g.leaf(self.w_hh)))
            .add(&g.leaf(self.b));
        let hsz = self.hidden;
        let i = gates.narrow(1, 0, hsz).sigmoid();
        let f = gates.narrow(1, hsz, 2 * hsz).sigmoid();
        let gg = gates.narrow(1, 2 * hsz, 3 * hsz).tanh();
        let o = gates.narrow(1, 3 * hsz, 4 * hsz).sigmoid();
        let c_next = f.mul(c).add(&i.mul(&gg));
        let h_next = o.mul(&c_next.tanh());
        (h_next, c_next)
    }

    pub fn zero_state<S: Scalar>(&self, batch: usize) -> (Tensor<S>, Tensor<S>) {
        let z = || Tensor::constant(ArrayD::zeros(IxDyn(&[batch, self.hidden])));
        (z(), z())
    }
}
