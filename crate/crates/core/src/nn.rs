//! Small layer descriptors. Layers only hold names and sizes; the values
//! live in a [`ParameterStore`] and are bound on each forward pass.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::Result;
use crate::params::{init_linear, ParameterStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub name: String,
    pub fan_in: usize,
    pub fan_out: usize,
    pub bias: bool,
}

impl Linear {
    pub fn new(name: impl Into<String>, fan_in: usize, fan_out: usize) -> Self {
        Self {
            name: name.into(),
            fan_in,
            fan_out,
            bias: true,
        }
    }

    /// A layer whose output has no additive term.
    pub fn without_bias(name: impl Into<String>, fan_in: usize, fan_out: usize) -> Self {
        Self {
            bias: false,
            ..Self::new(name, fan_in, fan_out)
        }
    }

    pub fn init<R: Rng>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        if self.bias {
            return init_linear(store, rng, &self.name, self.fan_in, self.fan_out);
        }
        let mut tmp = ParameterStore::new();
        init_linear(&mut tmp, rng, "", self.fan_in, self.fan_out)?;
        store.insert(&self.weight_name(), tmp.value(".w").clone())
    }

    pub fn weight_name(&self) -> String {
        format!("{}.w", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.name)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore, x: Var) -> Var {
        let w = tape.param(store, &self.weight_name());
        let h = tape.matmul(x, w);
        if !self.bias {
            return h;
        }
        let b = tape.param(store, &self.bias_name());
        tape.add_row(h, b)
    }

    /// Sets weight and bias to zero.
    pub fn zero(&self, store: &mut ParameterStore) -> Result<()> {
        store.set_value(&self.weight_name(), Tensor::zeros(self.fan_in, self.fan_out))?;
        if !self.bias {
            return Ok(());
        }
        store.set_value(&self.bias_name(), Tensor::zeros(1, self.fan_out))
    }
}

/// Linear layers with ReLU between them (none after the last).
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(name: &str, dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output sizes");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(format!("{name}.{i}"), w[0], w[1]))
            .collect();
        Self { layers }
    }

    /// Drops the bias of the last layer.
    pub fn without_output_bias(mut self) -> Self {
        if let Some(l) = self.layers.last_mut() {
            l.bias = false;
        }
        self
    }

    pub fn init<R: Rng>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        self.layers.iter().try_for_each(|l| l.init(store, rng))
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }

    pub fn last(&self) -> &Linear {
        self.layers.last().expect("non-empty MLP")
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore, x: Var) -> Var {
        let mut h = x;
        let n = self.layers.len();
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(tape, store, h);
            if i + 1 < n {
                h = tape.relu(h);
            }
        }
        h
    }
}

/// Row-wise LayerNorm with learnable gain (init 1) and shift (init 0).
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub name: String,
    pub dim: usize,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        Self {
            name: name.into(),
            dim,
        }
    }

    pub fn init(&self, store: &mut ParameterStore) -> Result<()> {
        store.insert(&format!("{}.gamma", self.name), Tensor::full(1, self.dim, 1.0))?;
        store.insert(&format!("{}.beta", self.name), Tensor::zeros(1, self.dim))
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore, x: Var) -> Var {
        let g = tape.param(store, &format!("{}.gamma", self.name));
        let b = tape.param(store, &format!("{}.beta", self.name));
        let n = tape.layer_norm_rows(x, LAYER_NORM_EPS);
        let s = tape.mul_row(n, g);
        tape.add_row(s, b)
    }
}
