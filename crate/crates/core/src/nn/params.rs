//! Named parameter storage, graph binding, and spectral normalization.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::Result;

use super::graph::{Grads, Graph, NodeId};
use super::optim::{adam_step, AdamParams, AdamState};
use super::scalar::Scalar;
use super::tensor::Tensor;

pub struct ParamEntry<S> {
    pub name: String,
    pub value: Tensor<S>,
    pub adam: AdamState<S>,
    pub trainable: bool,
    /// Power-iteration left vector for spectral-normalized weights.
    pub spectral_u: Option<Vec<S>>,
}

/// All trainable (and frozen) tensors of one or more models, keyed by
/// dotted names such as `ae1.enc.conv0.w`.
#[derive(Default)]
pub struct ParamStore<S> {
    entries: Vec<ParamEntry<S>>,
    index: HashMap<String, usize>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<S>, trainable: bool) {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter {name}"
        );
        let dims = value.dims().to_vec();
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            adam: AdamState::new(&dims),
            trainable,
            spectral_u: None,
        });
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> &ParamEntry<S> {
        let i = *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        &self.entries[i]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut ParamEntry<S> {
        let i = *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        &mut self.entries[i]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sorted parameter names.
    pub fn names(&self) -> Vec<String> {
        let mut n: Vec<String> = self.index.keys().cloned().collect();
        n.sort();
        n
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry<S>> {
        self.entries.iter()
    }

    /// Mark every parameter whose name starts with `prefix`.
    pub fn set_trainable_matching(&mut self, prefix: &str, trainable: bool) {
        for e in self.entries.iter_mut() {
            if e.name.starts_with(prefix) {
                e.trainable = trainable;
            }
        }
    }

    /// SHA-256 over name/dims/f32-little-endian data of every parameter whose
    /// name starts with `prefix`, in sorted name order. Freeze contracts and
    /// cache invalidation both key off this.
    pub fn hash_matching(&self, prefix: &str) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for name in self.names() {
            if !name.starts_with(prefix) {
                continue;
            }
            let e = self.get(&name);
            hasher.update(name.as_bytes());
            hasher.update((e.value.rank() as u32).to_le_bytes());
            for d in e.value.dims() {
                hasher.update((*d as u64).to_le_bytes());
            }
            for v in e.value.data() {
                hasher.update(v.as_f32().to_le_bytes());
            }
        }
        hasher.finalize().into()
    }

    pub fn content_hash(&self) -> [u8; 32] {
        self.hash_matching("")
    }

    /// Total number of scalar parameters under a prefix.
    pub fn count_matching(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| e.name.starts_with(prefix))
            .map(|e| e.value.numel())
            .sum()
    }

    /// Convert the store to another precision (drops optimizer state).
    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for name in self.names() {
            let e = self.get(&name);
            out.insert(&name, e.value.cast::<T>(), e.trainable);
        }
        out
    }
}

/// One forward/backward step: binds parameters into a graph as leaves, caches
/// the binding, and applies Adam updates from a backward pass.
pub struct Session<'a, S: Scalar> {
    pub g: &'a mut Graph<S>,
    pub store: &'a mut ParamStore<S>,
    bound: HashMap<String, NodeId>,
    /// Run one power-iteration step when binding spectral weights (training
    /// mode); otherwise reuse the stored vector.
    pub update_spectral: bool,
}

impl<'a, S: Scalar> Session<'a, S> {
    pub fn new(g: &'a mut Graph<S>, store: &'a mut ParamStore<S>) -> Self {
        Session {
            g,
            store,
            bound: HashMap::new(),
            update_spectral: true,
        }
    }

    /// Bind a parameter as a leaf (cached, so reuse accumulates gradients).
    pub fn param(&mut self, name: &str) -> NodeId {
        if let Some(&id) = self.bound.get(name) {
            return id;
        }
        let e = self.store.get(name);
        let id = self.g.leaf(e.value.clone(), e.trainable);
        self.bound.insert(name.to_string(), id);
        id
    }

    /// Bind a weight through spectral normalization: one power-iteration step
    /// estimates the top singular value sigma, and the bound node is
    /// `W / max(sigma, 1e-12)` with the iteration vectors held constant.
    pub fn param_spectral(&mut self, name: &str) -> NodeId {
        let key = format!("{name}#sn");
        if let Some(&id) = self.bound.get(&key) {
            return id;
        }
        let (u, v) = self.power_iteration(name);
        let w = self.param(name);
        let dims = self.g.value(w).dims().to_vec();
        let rows = dims[0];
        let cols: usize = dims[1..].iter().product();
        let uv = Tensor::from_fn(&dims, |i| u[i / cols] * v[i % cols]);
        let uv = self.g.constant(uv);
        let prod = self.g.mul(w, uv);
        let sigma = self.g.sum_all(prod);
        let sigma = self.g.clamp_min(sigma, 1e-12);
        let w_sn = self.g.div(w, sigma);
        debug_assert_eq!(u.len(), rows);
        self.bound.insert(key, w_sn);
        w_sn
    }

    /// Current sigma estimate for a spectral weight (diagnostics and tests).
    pub fn spectral_sigma(&mut self, name: &str) -> f64 {
        let (u, v) = self.power_iteration(name);
        let e = self.store.get(name);
        let dims = e.value.dims();
        let cols: usize = dims[1..].iter().product();
        let mut sigma = 0.0;
        for (i, val) in e.value.data().iter().enumerate() {
            sigma += u[i / cols].as_f64() * val.as_f64() * v[i % cols].as_f64();
        }
        sigma
    }

    fn power_iteration(&mut self, name: &str) -> (Vec<S>, Vec<S>) {
        let update = self.update_spectral;
        let e = self.store.get_mut(name);
        let dims = e.value.dims().to_vec();
        let rows = dims[0];
        let cols: usize = dims[1..].iter().product();
        let w = e.value.data();

        let mut u: Vec<S> = match &e.spectral_u {
            Some(u) => u.clone(),
            None => {
                // Deterministic init derived from the parameter name.
                let mut h = 0u64;
                for b in name.bytes() {
                    h = h.wrapping_mul(1099511628211).wrapping_add(b as u64);
                }
                let mut rng = ChaCha8Rng::seed_from_u64(h);
                (0..rows)
                    .map(|_| S::of_f64(rng.random_range(-1.0..1.0)))
                    .collect()
            }
        };
        normalize(&mut u);

        // v = normalize(W^T u); u' = normalize(W v)
        let mut v = vec![S::zero(); cols];
        for r in 0..rows {
            let ur = u[r];
            for c in 0..cols {
                v[c] += w[r * cols + c] * ur;
            }
        }
        normalize(&mut v);
        let mut u_next = vec![S::zero(); rows];
        for r in 0..rows {
            let mut acc = S::zero();
            for c in 0..cols {
                acc += w[r * cols + c] * v[c];
            }
            u_next[r] = acc;
        }
        normalize(&mut u_next);

        if update {
            e.spectral_u = Some(u_next.clone());
        } else if e.spectral_u.is_none() {
            e.spectral_u = Some(u_next.clone());
        }
        (u_next, v)
    }

    /// Apply Adam to every trainable bound parameter matching `prefix`,
    /// using gradients from `grads`.
    pub fn apply_grads(&mut self, grads: &Grads, hp: &AdamParams, prefix: &str) -> Result<usize> {
        let mut updated = 0;
        let names: Vec<(String, NodeId)> = self
            .bound
            .iter()
            .filter(|(n, _)| !n.ends_with("#sn") && n.starts_with(prefix))
            .map(|(n, id)| (n.clone(), *id))
            .collect();
        for (name, id) in names {
            let e = self.store.get(&name);
            if !e.trainable {
                continue;
            }
            if let Some(gid) = grads.get(id) {
                let grad = self.g.value(gid).clone();
                let e = self.store.get_mut(&name);
                adam_step(&mut e.value, &grad, &mut e.adam, hp)?;
                updated += 1;
            }
        }
        Ok(updated)
    }
}

fn normalize<S: Scalar>(v: &mut [S]) {
    let norm: S = v.iter().map(|&x| x * x).sum::<S>().sqrt();
    let floor = S::of_f64(1e-12);
    let n = if norm > floor { norm } else { floor };
    for x in v.iter_mut() {
        *x = *x / n;
    }
}
