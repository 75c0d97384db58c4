//! Named parameter collection and gradient-ascent optimizers.
//!
//! Both optimizers ascend: parameters move along +gradient of the training
//! objective (a lower bound to be maximized). Names are kept in a BTreeMap
//! so update order, snapshots, and serialization are deterministic.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parameter values keyed by name, used for snapshots and serialization.
pub type Snapshot = BTreeMap<String, Vec<f64>>;

#[derive(Default)]
pub struct ParameterStore {
    entries: BTreeMap<String, Tensor>,
    frozen: BTreeSet<String>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, t: Tensor) -> Result<()> {
        if !t.requires_grad() {
            return Err(Error::InvalidArgument(format!(
                "parameter {} must be a gradient-requiring leaf",
                name
            )));
        }
        if self.entries.insert(name.to_string(), t).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate parameter name {}", name)));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {}", name)))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    /// Total scalar parameter count.
    pub fn param_count(&self) -> usize {
        self.entries.values().map(|t| t.len()).sum()
    }

    /// Exclude a parameter from optimizer updates (it still participates in
    /// the graph). Used to pin known or fixed model components.
    pub fn freeze(&mut self, name: &str) -> Result<()> {
        if !self.entries.contains_key(name) {
            return Err(Error::InvalidArgument(format!("cannot freeze unknown parameter {}", name)));
        }
        self.frozen.insert(name.to_string());
        Ok(())
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.contains(name)
    }

    pub fn zero_grads(&self) {
        for t in self.entries.values() {
            t.zero_grad();
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        self.entries.iter().map(|(k, v)| (k.clone(), v.to_vec())).collect()
    }

    pub fn restore(&self, snap: &Snapshot) -> Result<()> {
        for (name, values) in snap {
            let t = self.get(name)?;
            if t.len() != values.len() {
                return Err(Error::Shape(format!(
                    "snapshot for {} has {} values, parameter has {}",
                    name,
                    values.len(),
                    t.len()
                )));
            }
            t.data_mut().copy_from_slice(values);
        }
        Ok(())
    }

    /// Overwrite one parameter's values in place.
    pub fn set_values(&self, name: &str, values: &[f64]) -> Result<()> {
        let t = self.get(name)?;
        if t.len() != values.len() {
            return Err(Error::Shape(format!(
                "set_values for {} got {} values, parameter has {}",
                name,
                values.len(),
                t.len()
            )));
        }
        t.data_mut().copy_from_slice(values);
        Ok(())
    }
}

/// One plain gradient-ascent step: `p += lr * grad`. Parameters without a
/// gradient (unreached by the last backward pass) are left unchanged.
pub fn sgd_step(store: &ParameterStore, lr: f64) -> Result<()> {
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", lr)));
    }
    for (name, t) in store.iter() {
        if store.is_frozen(name) {
            continue;
        }
        if let Some(g) = t.grad() {
            let mut d = t.data_mut();
            for (p, gi) in d.iter_mut().zip(&g) {
                *p += lr * gi;
            }
        }
    }
    Ok(())
}

/// ADAM moment state. Moments are keyed by parameter name and created lazily
/// so the same state object survives graph rebuilds.
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        AdamState { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new()
    }
}

/// One bias-corrected ADAM ascent step over every unfrozen parameter with a
/// gradient. The shared step counter increments once per call.
pub fn adam_step(store: &ParameterStore, state: &mut AdamState, lr: f64) -> Result<()> {
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", lr)));
    }
    state.step += 1;
    let t = state.step;
    let bc1 = 1.0 - state.beta1.powi(t as i32);
    let bc2 = 1.0 - state.beta2.powi(t as i32);
    for (name, tensor) in store.iter() {
        if store.is_frozen(name) {
            continue;
        }
        let g = match tensor.grad() {
            Some(g) => g,
            None => continue,
        };
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        if m.len() != g.len() {
            return Err(Error::Shape(format!("adam moment size mismatch for {}", name)));
        }
        let mut d = tensor.data_mut();
        for i in 0..g.len() {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            d[i] += lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}
