//! Persistent parameters, graph binding, and the Adam optimizer.

use std::collections::HashMap;

use ndarray::{ArrayD, IxDyn};
use rand_chacha::ChaCha20Rng;

use super::tape::{Arr, Tape, Var};
use super::normal_sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    /// Index into the owning store; stable for the store's lifetime.
    pub fn raw(self) -> usize {
        self.0
    }
}

#[derive(Clone)]
pub struct Param {
    pub name: String,
    pub value: Arr,
    pub trainable: bool,
    m: Arr,
    v: Arr,
}

/// Named parameter tensors with Adam moment state.
#[derive(Clone, Default)]
pub struct ParamStore {
    slots: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Arr, trainable: bool) -> ParamId {
        let m = ArrayD::zeros(value.raw_dim());
        let v = ArrayD::zeros(value.raw_dim());
        self.slots.push(Param {
            name: name.into(),
            value,
            trainable,
            m,
            v,
        });
        ParamId(self.slots.len() - 1)
    }

    pub fn value(&self, id: ParamId) -> &Arr {
        &self.slots[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Arr) {
        assert_eq!(self.slots[id.0].value.shape(), value.shape());
        self.slots[id.0].value = value;
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.slots[id.0].trainable = trainable;
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.slots[id.0].trainable
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.slots.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.slots[id.0].name
    }

    pub fn numel(&self) -> usize {
        self.slots.iter().map(|p| p.value.len()).sum()
    }

    pub fn trainable_numel(&self) -> usize {
        self.slots
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn snapshot(&self) -> Vec<Arr> {
        self.slots.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Arr]) {
        assert_eq!(snapshot.len(), self.slots.len());
        for (slot, value) in self.slots.iter_mut().zip(snapshot) {
            slot.value = value.clone();
        }
    }

    // -- seeded initializers ------------------------------------------------

    pub fn conv_init(
        &mut self,
        rng: &mut ChaCha20Rng,
        name: &str,
        out_c: usize,
        in_c: usize,
        k: usize,
    ) -> ParamId {
        let fan_in = (in_c * k * k) as f64;
        let std = (2.0 / fan_in).sqrt();
        let value = ArrayD::from_shape_fn(IxDyn(&[out_c, in_c, k, k]), |_| {
            (normal_sample(rng) * std) as f32
        });
        self.add(name, value, true)
    }

    pub fn linear_init(
        &mut self,
        rng: &mut ChaCha20Rng,
        name: &str,
        in_d: usize,
        out_d: usize,
    ) -> ParamId {
        let std = (2.0 / (in_d + out_d) as f64).sqrt();
        let value = ArrayD::from_shape_fn(IxDyn(&[in_d, out_d]), |_| {
            (normal_sample(rng) * std) as f32
        });
        self.add(name, value, true)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.add(name, ArrayD::zeros(IxDyn(shape)), true)
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.add(name, ArrayD::from_elem(IxDyn(shape), 1.0), true)
    }

    pub fn normal(
        &mut self,
        rng: &mut ChaCha20Rng,
        name: &str,
        shape: &[usize],
        std: f64,
    ) -> ParamId {
        let value = ArrayD::from_shape_fn(IxDyn(shape), |_| (normal_sample(rng) * std) as f32);
        self.add(name, value, true)
    }
}

/// A tape plus the parameter bindings made during one forward pass.
pub struct Graph<'s> {
    pub tape: Tape,
    store: &'s ParamStore,
    bound: HashMap<usize, Var>,
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Graph {
            tape: Tape::new(),
            store,
            bound: HashMap::new(),
        }
    }

    /// Bind a parameter as a leaf (memoized per graph).
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id.0) {
            return v;
        }
        let v = self.tape.leaf(self.store.value(id).clone());
        self.bound.insert(id.0, v);
        v
    }

    pub fn leaf(&mut self, value: Arr) -> Var {
        self.tape.leaf(value)
    }

    pub fn backward(&mut self, root: Var) -> crate::error::Result<()> {
        self.tape.backward(root)
    }

    /// Gradients of bound parameters, in parameter-id order for determinism.
    pub fn param_grads(&self) -> Vec<(ParamId, Arr)> {
        let mut ids: Vec<(usize, Var)> = self.bound.iter().map(|(&i, &v)| (i, v)).collect();
        ids.sort_by_key(|(i, _)| *i);
        ids.into_iter()
            .filter_map(|(i, v)| {
                self.tape
                    .grad(v)
                    .map(|g| (ParamId(i), g.clone()))
            })
            .collect()
    }
}

impl std::ops::Deref for Graph<'_> {
    type Target = Tape;
    fn deref(&self) -> &Tape {
        &self.tape
    }
}

impl std::ops::DerefMut for Graph<'_> {
    fn deref_mut(&mut self) -> &mut Tape {
        &mut self.tape
    }
}

/// Adam with bias correction; moment state lives in the [`ParamStore`].
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    t: i32,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
        }
    }

    /// GAN-style moments (beta1 = 0.5).
    pub fn for_gan(lr: f32) -> Self {
        Adam {
            beta1: 0.5,
            ..Adam::new(lr)
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Arr)]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (id, g) in grads {
            let slot = &mut store.slots[id.0];
            if !slot.trainable {
                continue;
            }
            ndarray::Zip::from(&mut slot.m)
                .and(g)
                .for_each(|m, &gv| *m = self.beta1 * *m + (1.0 - self.beta1) * gv);
            ndarray::Zip::from(&mut slot.v)
                .and(g)
                .for_each(|v, &gv| *v = self.beta2 * *v + (1.0 - self.beta2) * gv * gv);
            let lr = self.lr;
            let eps = self.eps;
            ndarray::Zip::from(&mut slot.value)
                .and(&slot.m)
                .and(&slot.v)
                .for_each(|p, &m, &v| {
                    let mhat = m / bc1;
                    let vhat = v / bc2;
                    *p -= lr * mhat / (vhat.sqrt() + eps);
                });
        }
    }
}
