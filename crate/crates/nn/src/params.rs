use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

static NEXT_STORE: AtomicUsize = AtomicUsize::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named parameter tensors of one network component.
#[derive(Debug)]
pub struct ParamStore<T> {
    uid: usize,
    names: Vec<String>,
    values: Vec<Rc<Tensor<T>>>,
    trainable: bool,
}

impl<T: Scalar> Clone for ParamStore<T> {
    fn clone(&self) -> Self {
        ParamStore {
            uid: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            names: self.names.clone(),
            values: self.values.iter().map(|v| Rc::new((**v).clone())).collect(),
            trainable: self.trainable,
        }
    }
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            uid: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            names: Vec::new(),
            values: Vec::new(),
            trainable: true,
        }
    }

    /// A store whose parameters never receive gradients (frozen feature nets).
    pub fn frozen() -> Self {
        ParamStore {
            trainable: false,
            ..Self::new()
        }
    }

    pub(crate) fn uid(&self) -> usize {
        self.uid
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.values.push(Rc::new(value));
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub(crate) fn get_rc(&self, id: ParamId) -> Rc<Tensor<T>> {
        Rc::clone(&self.values[id.0])
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Rc::make_mut(&mut self.values[id.0])
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(|s| s.as_str()).zip(self.values.iter().map(|v| &**v))
    }

    pub fn num_elements(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            uid: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            names: self.names.clone(),
            values: self.values.iter().map(|v| Rc::new(v.cast())).collect(),
            trainable: self.trainable,
        }
    }
}

/// Per-parameter gradients of one store, indexed like the store.
#[derive(Clone, Debug)]
pub struct StoreGrads<T> {
    pub grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> StoreGrads<T> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().flatten().map(|g| g.sq_norm()).sum::<f64>().sqrt()
    }

    /// Rescale so the global L2 norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm.is_finite() {
            let s = T::from_f64_lossy(max_norm / norm);
            for g in self.grads.iter_mut().flatten() {
                *g = g.scale(s);
            }
        }
        norm
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.all_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction; moments kept in f64.
#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<T: Scalar>(cfg: AdamConfig, store: &ParamStore<T>) -> Self {
        let m: Vec<Vec<f64>> = store.values.iter().map(|v| vec![0.0; v.len()]).collect();
        Adam {
            cfg,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step<T: Scalar>(&mut self, store: &mut ParamStore<T>, grads: &StoreGrads<T>) {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for id in store.ids().collect::<Vec<_>>() {
            let Some(g) = grads.get(id) else { continue };
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            if lr == 0.0 {
                // moments still advance, weights must not move
                for ((mi, vi), gi) in m.iter_mut().zip(v.iter_mut()).zip(g.data()) {
                    let gf = gi.as_f64();
                    *mi = beta1 * *mi + (1.0 - beta1) * gf;
                    *vi = beta2 * *vi + (1.0 - beta2) * gf * gf;
                }
                continue;
            }
            let p = store.get_mut(id);
            for (((pi, mi), vi), gi) in p.data_mut().iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                let gf = gi.as_f64();
                *mi = beta1 * *mi + (1.0 - beta1) * gf;
                *vi = beta2 * *vi + (1.0 - beta2) * gf * gf;
                let update = lr * (*mi / bc1) / ((*vi / bc2).sqrt() + eps);
                *pi = T::from_f64_lossy(pi.as_f64() - update);
            }
        }
    }
}
