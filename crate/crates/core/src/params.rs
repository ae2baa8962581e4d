//! Named trainable tensors with their gradients and Adam moments.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::math;
use crate::tape::{Gradients, Tape};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    /// First Adam moment.
    pub m: Tensor,
    /// Second Adam moment.
    pub v: Tensor,
    /// Frozen parameters bind as constants and are skipped by the optimizer.
    pub frozen: bool,
}

impl Param {
    fn new(value: Tensor) -> Self {
        let zeros = || {
            Tensor::new(value.shape().to_vec(), alloc::vec![0.0; value.len()]).expect("same shape")
        };
        Self {
            grad: zeros(),
            m: zeros(),
            v: zeros(),
            value,
            frozen: false,
        }
    }
}

/// Parameters keyed by unique name; iteration order is the sorted name
/// order, which keeps checkpoints and updates deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    params: BTreeMap<String, Param>,
    pub(crate) step: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        self.params.insert(name.to_string(), Param::new(value));
        Ok(())
    }

    /// Replaces a value in place, keeping the shape.
    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::Invalid(format!("unknown parameter `{name}`")))?;
        if p.value.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "`{name}` is {:?}, got {:?}",
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn value(&self, name: &str) -> &Tensor {
        &self.params[name].value
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Freezes (or unfreezes) every parameter whose name starts with `prefix`.
    pub fn set_frozen(&mut self, prefix: &str, frozen: bool) {
        for (k, p) in self.params.iter_mut() {
            if k.starts_with(prefix) {
                p.frozen = frozen;
            }
        }
    }

    /// Adds the gradients of every parameter bound on `tape`.
    pub fn accumulate_grads(&mut self, tape: &Tape, grads: &Gradients) {
        for (name, var) in tape.bound_params() {
            if let (Some(p), Some(g)) = (self.params.get_mut(name), grads.get(var)) {
                if !p.frozen {
                    p.grad.add_assign(g);
                }
            }
        }
    }

    /// Copies every parameter of `other` under `prefix` + its name.
    pub fn absorb(&mut self, prefix: &str, other: &ParameterStore) -> Result<()> {
        for (k, p) in other.iter() {
            self.insert(&format!("{prefix}{k}"), p.value.clone())?;
        }
        Ok(())
    }

    /// Overwrites `{prefix}{name}` with each value of `other`; every target
    /// must already exist with the same shape.
    pub fn assign(&mut self, prefix: &str, other: &ParameterStore) -> Result<()> {
        for (k, p) in other.iter() {
            let name = format!("{prefix}{k}");
            if !self.contains(&name) {
                return Err(Error::Invalid(format!("unknown parameter {name}")));
            }
            self.set_value(&name, p.value.clone())?;
        }
        Ok(())
    }

    /// Parameters whose name starts with `prefix`, with the prefix removed.
    pub fn extract(&self, prefix: &str) -> ParameterStore {
        let mut out = ParameterStore::new();
        for (k, p) in self.iter() {
            if let Some(rest) = k.strip_prefix(prefix) {
                out.insert(rest, p.value.clone()).expect("unique names");
            }
        }
        out
    }

    /// True when both stores hold the same names with bit-identical values.
    pub fn values_identical(&self, other: &ParameterStore) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(other.params.iter()).all(|((ka, a), (kb, b))| {
                ka == kb
                    && a.value.shape() == b.value.shape()
                    && a
                        .value
                        .data()
                        .iter()
                        .zip(b.value.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// Glorot-uniform weight (`fan_in x fan_out`) plus zero bias (`1 x fan_out`)
/// registered as `{name}.w` / `{name}.b`.
pub fn init_linear<R: Rng>(
    store: &mut ParameterStore,
    rng: &mut R,
    name: &str,
    fan_in: usize,
    fan_out: usize,
) -> Result<()> {
    let bound = math::sqrt(6.0 / (fan_in + fan_out) as f64);
    let w: Vec<f64> = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    store.insert(&format!("{name}.w"), Tensor::matrix(fan_in, fan_out, w))?;
    store.insert(&format!("{name}.b"), Tensor::zeros(1, fan_out))?;
    Ok(())
}
