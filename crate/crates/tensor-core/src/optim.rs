//! Named parameter collections and the AdamW update rule.

use std::collections::BTreeMap;

use crate::error::{invalid, TensorError, TensorResult};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Parameters addressed by stable string names.
///
/// A `BTreeMap` keeps iteration order independent of insertion order,
/// which makes optimizer sweeps, checkpoint layout, and gradient-norm
/// reductions deterministic. Cloning a set clones the handles, not the
/// storage: both sets then address the same underlying parameters, so
/// a model can expose sub-module views and a merged training view.
#[derive(Clone)]
pub struct ParamSet<T: Scalar> {
    params: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { params: BTreeMap::new() }
    }

    /// Register a leaf under `name`. Panics on duplicate names: those
    /// are always wiring mistakes.
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Tensor<T> {
        let name = name.into();
        if self.params.insert(name.clone(), t.clone()).is_some() {
            panic!("duplicate parameter name {name:?}");
        }
        t
    }

    /// Absorb another set under a `prefix.` namespace.
    pub fn merge(&mut self, prefix: &str, other: ParamSet<T>) {
        for (name, t) in other.params {
            self.insert(format!("{prefix}.{name}"), t);
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn numel(&self) -> usize {
        self.params.values().map(|t| t.numel()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn zero_grad(&self) {
        for t in self.params.values() {
            t.zero_grad();
        }
    }

    /// Freeze or unfreeze every parameter in the set.
    pub fn set_trainable(&self, on: bool) {
        for t in self.params.values() {
            t.set_trainable(on);
        }
    }

    /// Freeze or unfreeze parameters whose name starts with `prefix`.
    pub fn set_trainable_prefix(&self, prefix: &str, on: bool) {
        for (name, t) in &self.params {
            if name.starts_with(prefix) {
                t.set_trainable(on);
            }
        }
    }

    /// Snapshot all values in name order as (name, shape, data).
    pub fn export(&self) -> Vec<(String, Vec<usize>, Vec<T>)> {
        self.params
            .iter()
            .map(|(k, t)| (k.clone(), t.shape().to_vec(), t.to_vec()))
            .collect()
    }

    /// Restore values captured by [`ParamSet::export`]. Every entry
    /// must name an existing parameter of identical shape; extra or
    /// missing names are errors so silent partial loads cannot occur.
    pub fn load(&self, entries: &[(String, Vec<usize>, Vec<T>)]) -> TensorResult<()> {
        if entries.len() != self.params.len() {
            return Err(invalid(
                "paramset_load",
                format!("{} entries for {} parameters", entries.len(), self.params.len()),
            ));
        }
        for (name, shape, data) in entries {
            let p = self
                .params
                .get(name)
                .ok_or_else(|| invalid("paramset_load", format!("unknown parameter {name:?}")))?;
            if p.shape() != shape.as_slice() {
                return Err(invalid(
                    "paramset_load",
                    format!("{name:?}: shape {:?} vs stored {shape:?}", p.shape()),
                ));
            }
            p.set_data(data);
        }
        Ok(())
    }

    /// Copy values from a same-architecture set (identical names and
    /// shapes), leaving trainability flags untouched.
    pub fn copy_from(&self, other: &ParamSet<T>) -> TensorResult<()> {
        self.load(&other.export())
    }
}

/// Per-parameter-group hyperparameters for [`AdamW`].
#[derive(Debug, Clone, Copy)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0, clip_norm: None }
    }
}

struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// AdamW with decoupled weight decay and optional global-norm clipping.
///
/// Moments are kept in f64 regardless of the parameter dtype, and per
/// parameter a learning-rate multiplier supports reduced-rate groups
/// (for example a backbone fine-tuned at a tenth of the base rate).
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    moments: BTreeMap<String, Moments>,
    lr_scale: BTreeMap<String, f64>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> TensorResult<Self> {
        if !(config.lr > 0.0 && config.lr.is_finite()) {
            return Err(invalid("adamw", format!("learning rate must be positive, got {}", config.lr)));
        }
        if !(0.0..1.0).contains(&config.beta1) || !(0.0..1.0).contains(&config.beta2) {
            return Err(invalid(
                "adamw",
                format!("betas must lie in [0, 1), got ({}, {})", config.beta1, config.beta2),
            ));
        }
        Ok(AdamW { config, step: 0, moments: BTreeMap::new(), lr_scale: BTreeMap::new() })
    }

    /// Steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Scale the learning rate for all parameters whose name starts
    /// with `prefix` (multiplier composes onto the base rate).
    pub fn set_lr_scale(&mut self, prefix: &str, scale: f64) {
        self.lr_scale.insert(prefix.to_string(), scale);
    }

    fn scale_for(&self, name: &str) -> f64 {
        let mut s = 1.0;
        for (prefix, scale) in &self.lr_scale {
            if name.starts_with(prefix.as_str()) {
                s *= scale;
            }
        }
        s
    }

    /// Global L2 norm over the gradients of all trainable parameters.
    pub fn grad_norm<T: Scalar>(params: &ParamSet<T>) -> f64 {
        let mut sq = 0.0f64;
        for (_, t) in params.iter() {
            if !t.is_trainable() {
                continue;
            }
            if let Some(g) = t.grad() {
                for v in g {
                    let v = v.to_f64();
                    sq += v * v;
                }
            }
        }
        sq.sqrt()
    }

    /// Apply one update to every trainable parameter that has a
    /// gradient, then clear all gradients. Returns the pre-clip global
    /// gradient norm. Errors on non-finite gradients and leaves the
    /// parameters untouched in that case.
    pub fn step<T: Scalar>(&mut self, params: &ParamSet<T>) -> TensorResult<f64> {
        let norm = Self::grad_norm(params);
        if !norm.is_finite() {
            return Err(TensorError::NonFinite { op: "adamw_step" });
        }
        let clip = match self.config.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };

        self.step += 1;
        let t = self.step as i32;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);

        for (name, p) in params.iter() {
            if !p.is_trainable() {
                continue;
            }
            let grad = match p.grad() {
                Some(g) => g,
                None => continue,
            };
            let n = p.numel();
            let lr = c.lr * self.scale_for(name);
            let slot = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| Moments { m: vec![0.0; n], v: vec![0.0; n] });

            let mut data: Vec<T> = p.to_vec();
            for i in 0..n {
                let g = grad[i].to_f64() * clip;
                slot.m[i] = c.beta1 * slot.m[i] + (1.0 - c.beta1) * g;
                slot.v[i] = c.beta2 * slot.v[i] + (1.0 - c.beta2) * g * g;
                let mhat = slot.m[i] / bc1;
                let vhat = slot.v[i] / bc2;
                let x = data[i].to_f64();
                let updated = x - lr * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * x);
                data[i] = T::from_f64(updated);
            }
            p.set_data(&data);
        }

        params.zero_grad();
        Ok(norm)
    }

    /// Serializable optimizer state: step count plus flattened moments
    /// in name order.
    pub fn export_state(&self) -> (u64, Vec<(String, Vec<f64>, Vec<f64>)>) {
        let state = self
            .moments
            .iter()
            .map(|(k, mv)| (k.clone(), mv.m.clone(), mv.v.clone()))
            .collect();
        (self.step, state)
    }

    /// Restore state captured by [`AdamW::export_state`].
    pub fn import_state(&mut self, step: u64, state: Vec<(String, Vec<f64>, Vec<f64>)>) {
        self.step = step;
        self.moments = state
            .into_iter()
            .map(|(k, m, v)| (k, Moments { m, v }))
            .collect();
    }
}
