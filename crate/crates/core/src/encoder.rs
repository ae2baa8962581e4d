//! Point-cloud object encoder: an alignment network predicts a 3x3 affine
//! matrix `A`, the cloud is transformed as `P A^T`, and a shared per-point
//! MLP with max pooling yields a unit-norm embedding.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Linear, Mlp};
use crate::params::ParameterStore;
use crate::scene::Point;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    /// Hidden widths of the alignment network's per-point MLP.
    pub tnet_point_hidden: Vec<usize>,
    /// Hidden widths of the alignment network's head after pooling.
    pub tnet_head_hidden: Vec<usize>,
    /// Hidden widths of the encoder's per-point MLP.
    pub point_hidden: Vec<usize>,
    /// Points per object after downsampling.
    pub n_points: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            tnet_point_hidden: vec![32, 64],
            tnet_head_hidden: vec![32],
            point_hidden: vec![64, 128],
            n_points: 256,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.n_points == 0 {
            return Err(Error::Config("embed_dim and n_points must be positive".into()));
        }
        if self.tnet_point_hidden.is_empty() || self.point_hidden.is_empty() {
            return Err(Error::Config("per-point MLPs need at least one hidden layer".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectEncoder {
    pub cfg: EncoderConfig,
    tnet_point: Mlp,
    tnet_head: Mlp,
    point_mlp: Mlp,
    proj: Linear,
}

fn dims(input: usize, hidden: &[usize], output: Option<usize>) -> Vec<usize> {
    let mut d = vec![input];
    d.extend_from_slice(hidden);
    d.extend(output);
    d
}

impl ObjectEncoder {
    /// Parameter names are prefixed with `prefix` (e.g. `"enc."`).
    pub fn new(cfg: EncoderConfig, prefix: &str) -> Self {
        let tnet_point = Mlp::new(&alloc::format!("{prefix}tnet.point"), &dims(3, &cfg.tnet_point_hidden, None));
        let pooled = tnet_point.out_dim();
        let tnet_head = Mlp::new(&alloc::format!("{prefix}tnet.head"), &dims(pooled, &cfg.tnet_head_hidden, Some(9)));
        let point_mlp = Mlp::new(&alloc::format!("{prefix}point"), &dims(3, &cfg.point_hidden, None));
        let proj = Linear::new(alloc::format!("{prefix}proj"), point_mlp.out_dim(), cfg.embed_dim);
        Self {
            cfg,
            tnet_point,
            tnet_head,
            point_mlp,
            proj,
        }
    }

    /// Random weights, except the alignment head's last layer which starts
    /// at zero weight and identity bias so that `A == I` before training.
    pub fn init<R: Rng>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        self.cfg.validate()?;
        self.tnet_point.init(store, rng)?;
        self.tnet_head.init(store, rng)?;
        self.point_mlp.init(store, rng)?;
        self.proj.init(store, rng)?;
        let last = self.tnet_head.last();
        last.zero(store)?;
        let eye = Tensor::eye(3).reshaped(vec![1, 9])?;
        store.set_value(&last.bias_name(), eye)
    }

    pub fn embed_dim(&self) -> usize {
        self.cfg.embed_dim
    }

    /// Predicted alignment matrix `A` (3x3) for a `K x 3` cloud.
    pub fn tnet(&self, tape: &mut Tape, store: &ParameterStore, points: Var) -> Var {
        let h = self.tnet_point.forward(tape, store, points);
        let h = tape.relu(h);
        let pooled = tape.max_pool(h);
        let flat = self.tnet_head.forward(tape, store, pooled);
        tape.reshape(flat, 3, 3)
    }

    /// Returns the unit-norm embedding (`1 x d`) and the alignment matrix.
    pub fn encode(&self, tape: &mut Tape, store: &ParameterStore, points: Var) -> (Var, Var) {
        let a = self.tnet(tape, store, points);
        let at = tape.transpose(a);
        let aligned = tape.matmul(points, at);
        let h = self.point_mlp.forward(tape, store, aligned);
        let h = tape.relu(h);
        let pooled = tape.max_pool(h);
        let z = self.proj.forward(tape, store, pooled);
        (tape.normalize_rows(z), a)
    }

    /// Tape-free convenience: embedding of a raw cloud as a plain vector.
    pub fn embed(&self, store: &ParameterStore, points: &[Point]) -> Vec<f64> {
        let mut tape = Tape::new();
        let p = tape.constant(points_tensor(points));
        let (z, _) = self.encode(&mut tape, store, p);
        tape.value(z).data().to_vec()
    }
}

pub fn points_tensor(points: &[Point]) -> Tensor {
    Tensor::matrix(points.len(), 3, points.iter().flatten().copied().collect())
}

/// Orthogonality penalty `||I - A A^T||_F^2`.
pub fn reg_loss(tape: &mut Tape, a: Var) -> Var {
    let n = tape.value(a).rows();
    let at = tape.transpose(a);
    let aat = tape.matmul(a, at);
    let eye = tape.constant(Tensor::eye(n));
    let diff = tape.sub(eye, aat);
    let sq = tape.square(diff);
    tape.sum(sq)
}
