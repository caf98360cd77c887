//! Named parameter store with gradient slots.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::graph::{Gradients, Graph, StatUpdate};
use crate::nn::norm::BN_MOMENTUM;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Running statistics and other non-trainable state.
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub value: Tensor,
    pub grad: Tensor,
    pub kind: ParamKind,
}

/// Ordered by name so iteration (and therefore optimizer updates and
/// serialization) is deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamRegistry {
    entries: BTreeMap<String, ParamEntry>,
}

impl ParamRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor, kind: ParamKind) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let grad = Tensor::zeros(value.shape());
        self.entries
            .insert(name.to_string(), ParamEntry { value, grad, kind });
        Ok(())
    }

    pub fn insert_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        self.insert(name, value, ParamKind::Trainable)
    }

    pub fn insert_buffer(&mut self, name: &str, value: Tensor) -> Result<()> {
        self.insert(name, value, ParamKind::Buffer)
    }

    pub fn get(&self, name: &str) -> Result<&ParamEntry> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut ParamEntry> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.get(name)?.value)
    }

    /// Replaces a value, keeping the shape.
    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let e = self.get_mut(name)?;
        if e.value.shape() != value.shape() {
            return Err(Error::Dimension(format!(
                "{name}: shape {:?} vs {:?}",
                e.value.shape(),
                value.shape()
            )));
        }
        e.value = value;
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamEntry)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn trainable_count(&self) -> usize {
        self.entries
            .values()
            .filter(|e| e.kind == ParamKind::Trainable)
            .map(|e| e.value.len())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Adds the gradients of every parameter leaf in `graph`.
    pub fn accumulate(&mut self, graph: &Graph, grads: &Gradients) -> Result<()> {
        for (name, var) in graph.params() {
            if let Some(g) = grads.get(*var) {
                self.get_mut(name)?.grad.add_assign(g);
            }
        }
        Ok(())
    }

    /// Exponential running averages of batch-norm statistics.
    pub fn apply_stat_updates(&mut self, updates: &[StatUpdate]) -> Result<()> {
        for u in updates {
            for (suffix, fresh) in [("running_mean", &u.mean), ("running_var", &u.var)] {
                let e = self.get_mut(&format!("{}.{suffix}", u.prefix))?;
                for (r, f) in e.value.data_mut().iter_mut().zip(fresh.iter()) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * f;
                }
            }
        }
        Ok(())
    }

    pub fn grad_norm(&self) -> f64 {
        self.entries
            .values()
            .filter(|e| e.kind == ParamKind::Trainable)
            .map(|e| e.grad.data().iter().map(|g| g * g).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

/// Uniform in `±1/sqrt(fan_in)`.
pub fn uniform_fan_in(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::Mode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn duplicate_names_rejected() {
        let mut r = ParamRegistry::new();
        r.insert_param("w", Tensor::zeros(&[2])).unwrap();
        assert!(r.insert_param("w", Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn gradients_route_back_by_name() {
        let mut r = ParamRegistry::new();
        r.insert_param("w", Tensor::full(&[3], 2.0)).unwrap();
        let mut g = Graph::new(Mode::Train);
        let w = g.param(&r, "w").unwrap();
        let w2 = g.param(&r, "w").unwrap();
        assert_eq!(w, w2);
        let y = g.mul(w, w).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        r.accumulate(&g, &grads).unwrap();
        assert_eq!(r.get("w").unwrap().grad.data(), &[4.0, 4.0, 4.0]);
        r.zero_grads();
        assert_eq!(r.grad_norm(), 0.0);
    }

    #[test]
    fn init_respects_bound_and_seed() {
        let a = uniform_fan_in(&mut ChaCha8Rng::seed_from_u64(3), &[4, 16], 16);
        let b = uniform_fan_in(&mut ChaCha8Rng::seed_from_u64(3), &[4, 16], 16);
        assert_eq!(a, b);
        assert!(a.max_abs() <= 0.25);
    }
}
