//! Initial edge features from a subject/object embedding pair and their
//! geometric descriptor, plus the descriptor-reconstruction head.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::params::ParameterStore;
use crate::scene::DESCRIPTOR_DIM;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelationConfig {
    pub obj_proj_dim: usize,
    pub geo_proj_dim: usize,
    pub edge_dim: usize,
    pub lse_hidden: usize,
}

impl Default for RelationConfig {
    fn default() -> Self {
        Self {
            obj_proj_dim: 64,
            geo_proj_dim: 16,
            edge_dim: 128,
            lse_hidden: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelationEncoder {
    pub cfg: RelationConfig,
    g_obj: Mlp,
    g_geo: Mlp,
    f_r: Mlp,
    lse_head: Mlp,
}

const CONV_KERNEL: &str = "rel.conv.k";
const CONV_BIAS: &str = "rel.conv.b";

impl RelationEncoder {
    pub fn new(cfg: RelationConfig, embed_dim: usize) -> Self {
        let (p, g, e) = (cfg.obj_proj_dim, cfg.geo_proj_dim, cfg.edge_dim);
        Self {
            g_obj: Mlp::new("rel.g_obj", &[embed_dim, p, p]),
            g_geo: Mlp::new("rel.g_geo", &[DESCRIPTOR_DIM, g, g]),
            f_r: Mlp::new("rel.f_r", &[2 * p + g, e, e]),
            lse_head: Mlp::new("rel.lse", &[e, cfg.lse_hidden, DESCRIPTOR_DIM]),
            cfg,
        }
    }

    pub fn init<R: Rng>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        if self.cfg.obj_proj_dim == 0 || self.cfg.geo_proj_dim == 0 || self.cfg.edge_dim == 0 {
            return Err(Error::Config("relation encoder widths must be positive".into()));
        }
        self.g_obj.init(store, rng)?;
        self.g_geo.init(store, rng)?;
        self.f_r.init(store, rng)?;
        // Near-identity kernel so the conv starts as a mild smoothing.
        let taps: Vec<f64> = (0..5)
            .map(|k| if k == 2 { 1.0 } else { 0.0 } + rng.random_range(-0.1..0.1))
            .collect();
        store.insert(CONV_KERNEL, Tensor::matrix(1, 5, taps))?;
        store.insert(CONV_BIAS, Tensor::zeros(1, 1))?;
        self.lse_head.init(store, rng)
    }

    pub fn edge_dim(&self) -> usize {
        self.cfg.edge_dim
    }

    /// Zeroes the conv layer, the last stage of `f_r`.
    pub fn zero_final_layer(&self, store: &mut ParameterStore) -> Result<()> {
        store.set_value(CONV_KERNEL, Tensor::zeros(1, 5))?;
        store.set_value(CONV_BIAS, Tensor::zeros(1, 1))
    }

    fn combine(&self, tape: &mut Tape, store: &ParameterStore, p_sub: Var, p_obj: Var, geo: Var) -> Var {
        let pg = self.g_geo.forward(tape, store, geo);
        let cat = tape.concat_cols(&[p_sub, p_obj, pg]);
        let h = self.f_r.forward(tape, store, cat);
        let h = tape.relu(h);
        let k = tape.param(store, CONV_KERNEL);
        let b = tape.param(store, CONV_BIAS);
        tape.conv1d_k5(h, k, b)
    }

    /// Edge features for row-aligned batches: `z_sub` and `z_obj` are
    /// `E x d`, `geo` is `E x 11`.
    pub fn init_edge_feature(&self, tape: &mut Tape, store: &ParameterStore, z_sub: Var, z_obj: Var, geo: Var) -> Var {
        let ps = self.g_obj.forward(tape, store, z_sub);
        let po = self.g_obj.forward(tape, store, z_obj);
        self.combine(tape, store, ps, po, geo)
    }

    /// Edge features for every `(sub, obj)` index pair of a scene. The node
    /// projection is computed once and gathered per edge.
    pub fn edge_features(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        nodes: Var,
        pairs: &[(usize, usize)],
        descriptors: Var,
    ) -> Var {
        let proj = self.g_obj.forward(tape, store, nodes);
        let sub: Vec<Option<usize>> = pairs.iter().map(|p| Some(p.0)).collect();
        let obj: Vec<Option<usize>> = pairs.iter().map(|p| Some(p.1)).collect();
        let ps = tape.gather_rows(proj, &sub);
        let po = tape.gather_rows(proj, &obj);
        self.combine(tape, store, ps, po, descriptors)
    }

    /// Predicted descriptors, `E x 11`.
    pub fn lse_reconstruct(&self, tape: &mut Tape, store: &ParameterStore, z_e: Var) -> Var {
        self.lse_head.forward(tape, store, z_e)
    }
}

/// Mean absolute error over all components.
pub fn lse_loss(tape: &mut Tape, pred: Var, target: Var) -> Var {
    let d = tape.sub(pred, target);
    let a = tape.abs(d);
    tape.mean(a)
}

/// Descriptors stacked row-wise, `E x 11`.
pub fn descriptor_matrix(descriptors: &[[f64; DESCRIPTOR_DIM]]) -> Tensor {
    let data: Vec<f64> = descriptors.iter().flatten().copied().collect();
    Tensor::matrix(descriptors.len(), DESCRIPTOR_DIM, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lse_loss_examples() {
        let g: Vec<f64> = (0..11).map(|i| i as f64 * 0.3 - 1.0).collect();
        let mut tape = Tape::new();
        let t = tape.constant(Tensor::row(&g));
        let same = tape.constant(Tensor::row(&g));
        let l0 = lse_loss(&mut tape, same, t);
        let plus = tape.constant(Tensor::row(&g).map(|x| x + 1.0));
        let l1 = lse_loss(&mut tape, plus, t);
        assert_eq!(tape.scalar(l0), 0.0);
        assert!((tape.scalar(l1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_conv_gives_zero_edge() {
        let enc = RelationEncoder::new(RelationConfig { obj_proj_dim: 4, geo_proj_dim: 3, edge_dim: 6, lse_hidden: 5 }, 8);
        let mut store = ParameterStore::new();
        enc.init(&mut store, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        enc.zero_final_layer(&mut store).unwrap();
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::full(1, 8, 0.3));
        let b = tape.constant(Tensor::full(1, 8, -0.2));
        let g = tape.constant(Tensor::full(1, 11, 0.5));
        let e = enc.init_edge_feature(&mut tape, &store, a, b, g);
        assert!(tape.value(e).data().iter().all(|&x| x == 0.0));
    }
}
