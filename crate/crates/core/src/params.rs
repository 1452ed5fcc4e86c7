//! Named parameter storage and the Adam optimizer.
//!
//! Parameter values live in a [`ParamStore`]. Each forward pass binds them
//! into fresh graph leaves ([`ParamStore::bind`]); only the names selected as
//! trainable become gradient-tracking leaves, which is how a critic step
//! keeps the generator detached and vice versa.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::{numel_of, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: BTreeMap<String, usize>,
}

/// Parameters materialized as graph leaves for one forward pass.
pub struct Bound {
    tensors: Vec<Tensor>,
}

impl Bound {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], value: Vec<f64>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Contract(alloc::format!("duplicate parameter `{name}`")));
        }
        if numel_of(shape) != value.len() {
            return Err(Error::Dimension(alloc::format!(
                "parameter `{name}` shape {:?} vs {} values",
                shape,
                value.len()
            )));
        }
        let id = self.entries.len();
        self.entries.push(ParamEntry {
            name: String::from(name),
            shape: shape.to_vec(),
            grad: vec![0.0; value.len()],
            value,
        });
        self.index.insert(String::from(name), id);
        Ok(ParamId(id))
    }

    /// Add with values drawn from `N(0, std²)`.
    pub fn add_normal(&mut self, name: &str, shape: &[usize], std: f64, r: &mut Rng) -> Result<ParamId> {
        let value = (0..numel_of(shape)).map(|_| std * rng::normal(r)).collect();
        self.add(name, shape, value)
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.add(name, shape, vec![0.0; numel_of(shape)])
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|i| ParamId(*i))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entry_mut(&mut self, id: ParamId) -> &mut ParamEntry {
        &mut self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    /// Ids whose names satisfy `pred`.
    pub fn select(&self, pred: impl Fn(&str) -> bool) -> Vec<ParamId> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| pred(&e.name))
            .map(|(i, _)| ParamId(i))
            .collect()
    }

    /// Replace a value in place, keeping its shape.
    pub fn set_value(&mut self, name: &str, value: Vec<f64>) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::Contract(alloc::format!("unknown parameter `{name}`")))?;
        let e = &mut self.entries[id.0];
        if e.value.len() != value.len() {
            return Err(Error::Dimension(alloc::format!(
                "parameter `{name}` holds {} values, got {}",
                e.value.len(),
                value.len()
            )));
        }
        e.value = value;
        Ok(())
    }

    /// Materialize every parameter as a leaf; `trainable` picks which ones
    /// track gradients.
    pub fn bind(&self, trainable: impl Fn(&str) -> bool) -> Result<Bound> {
        let tensors = self
            .entries
            .iter()
            .map(|e| {
                if trainable(&e.name) {
                    Tensor::param(e.value.clone(), &e.shape)
                } else {
                    Tensor::new(e.value.clone(), &e.shape)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Bound { tensors })
    }

    /// Add `scale ×` the leaf gradients of `bound` into the stored gradients.
    pub fn accumulate(&mut self, bound: &Bound, scale: f64) {
        for (e, t) in self.entries.iter_mut().zip(&bound.tensors) {
            if let Some(g) = t.grad() {
                for (acc, v) in e.grad.iter_mut().zip(g) {
                    *acc += scale * v;
                }
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// L2 norm of the stored gradients of `ids`.
    pub fn grad_norm(&self, ids: &[ParamId]) -> f64 {
        let s: f64 = ids
            .iter()
            .flat_map(|id| self.entries[id.0].grad.iter())
            .map(|g| g * g)
            .sum();
        libm::sqrt(s)
    }
}

/// Adam hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment state for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    /// Keyed by parameter id.
    pub moments: BTreeMap<ParamId, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, moments: BTreeMap::new() }
    }

    /// One bias-corrected update of `ids` from their stored gradients.
    pub fn update(&mut self, store: &mut ParamStore, ids: &[ParamId]) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - libm::pow(c.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(c.beta2, self.step as f64);
        for &id in ids {
            let e = store.entry_mut(id);
            let (m, v) = self
                .moments
                .entry(id)
                .or_insert_with(|| (vec![0.0; e.value.len()], vec![0.0; e.value.len()]));
            for i in 0..e.value.len() {
                let g = e.grad[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                e.value[i] -= c.lr * m_hat / (libm::sqrt(v_hat) + c.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bind_selects_trainable_leaves() {
        let mut s = ParamStore::new();
        let a = s.add("gen.w", &[2], vec![1.0, 2.0]).unwrap();
        let b = s.add("disc.w", &[2], vec![3.0, 4.0]).unwrap();
        let bound = s.bind(|n| n.starts_with("disc.")).unwrap();
        assert!(!bound.get(a).requires_grad());
        assert!(bound.get(b).requires_grad());
        let loss = bound.get(a).mul(bound.get(b)).unwrap().sum().unwrap();
        loss.backward().unwrap();
        s.accumulate(&bound, 1.0);
        assert_eq!(s.entry(a).grad, vec![0.0, 0.0]);
        assert_eq!(s.entry(b).grad, vec![1.0, 2.0]);
        assert!(s.add("gen.w", &[1], vec![0.0]).is_err());
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut s = ParamStore::new();
        let p = s.add("p", &[2], vec![1.0, -1.0]).unwrap();
        s.entry_mut(p).grad = vec![0.5, -2.0];
        let mut opt = Adam::new(AdamConfig { lr: 0.1, ..AdamConfig::default() });
        opt.update(&mut s, &[p]);
        // first bias-corrected step has magnitude lr·|g|/(|g|+eps) ≈ lr
        let v = &s.entry(p).value;
        assert!((v[0] - 0.9).abs() < 1e-6);
        assert!((v[1] + 0.9).abs() < 1e-6);
    }
}
