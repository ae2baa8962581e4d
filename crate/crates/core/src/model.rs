//! The full scene-graph predictor: object encoder, relation encoder,
//! message passing, and the object and predicate heads.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{points_tensor, EncoderConfig, ObjectEncoder};
use crate::error::{Error, Result};
use crate::eval::{GtEdge, SceneDump};
use crate::gnn::{all_pairs, Gnn, GnnConfig, GnnFlags, SceneGraphState};
use crate::nn::Linear;
use crate::params::ParameterStore;
use crate::relation::{lse_loss, RelationConfig, RelationEncoder};
use crate::scene::{center, distance_matrix, downsample, geometric_descriptor, Scene, DESCRIPTOR_DIM};
use crate::tape::{Tape, Var};
use crate::tensor::{self, Tensor};

pub const ENCODER_PREFIX: &str = "enc.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_obj: usize,
    pub n_pred: usize,
    pub encoder: EncoderConfig,
    pub relation: RelationConfig,
    pub gnn: GnnConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_obj: 8,
            n_pred: 5,
            encoder: EncoderConfig::default(),
            relation: RelationConfig::default(),
            gnn: GnnConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Reduced widths for small synthetic runs: 4 heads, one iteration,
    /// 128 points per object.
    pub fn desk(n_obj: usize, n_pred: usize) -> Self {
        Self {
            n_obj,
            n_pred,
            encoder: EncoderConfig {
                n_points: 128,
                ..EncoderConfig::default()
            },
            relation: RelationConfig {
                obj_proj_dim: 32,
                geo_proj_dim: 16,
                edge_dim: 64,
                lse_hidden: 32,
            },
            gnn: GnnConfig {
                heads: 4,
                iterations: 1,
                bias_hidden: 8,
                node_hidden: 64,
                edge_hidden: 64,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_obj == 0 || self.n_pred == 0 {
            return Err(Error::Config("need at least one class and one predicate".into()));
        }
        self.encoder.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneGraphModel {
    pub cfg: ModelConfig,
    pub flags: GnnFlags,
    pub encoder: ObjectEncoder,
    pub relation: RelationEncoder,
    pub gnn: Gnn,
    obj_head: Linear,
    pred_head: Linear,
}

/// A scene turned into model inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneInput {
    pub id: String,
    /// Downsampled, centered cloud per instance (`K x 3`).
    pub points: Vec<Tensor>,
    /// Frozen object embeddings (`N x d`) when precomputed.
    pub embeddings: Option<Tensor>,
    pub pairs: Vec<(usize, usize)>,
    /// `E x 11`, row-aligned with `pairs`.
    pub descriptors: Tensor,
    pub dist: Tensor,
    pub labels: Vec<usize>,
    /// `E x P` multi-hot predicate targets.
    pub targets: Tensor,
    pub gt_edges: Vec<GtEdge>,
}

impl SceneInput {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Stable 64-bit FNV-1a hash, used to derive per-scene seeds from ids.
pub fn stable_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Downsamples each instance with a seed derived from the scene id, and
/// builds all ordered pairs with their descriptors and targets.
pub fn prepare_scene(scene: &Scene, n_points: usize, n_pred: usize) -> Result<SceneInput> {
    let stats = scene.stats()?;
    let base = stable_hash(&scene.id);
    let points = scene
        .instances
        .iter()
        .enumerate()
        .map(|(i, inst)| points_tensor(&center(&downsample(&inst.points, n_points, base.wrapping_add(i as u64)))))
        .collect();
    let n = scene.len();
    let pairs = all_pairs(n);
    let mut desc = Vec::with_capacity(pairs.len() * DESCRIPTOR_DIM);
    for &(i, j) in &pairs {
        desc.extend_from_slice(geometric_descriptor(&stats[i], &stats[j])?.as_slice());
    }
    let gt = scene.pair_predicates();
    let mut targets = Tensor::zeros(pairs.len(), n_pred);
    for (e, p) in pairs.iter().enumerate() {
        for &k in gt.get(p).map(Vec::as_slice).unwrap_or(&[]) {
            if k >= n_pred {
                return Err(Error::Invalid(alloc::format!("{}: predicate {k} out of range", scene.id)));
            }
            targets.set(e, k, 1.0);
        }
    }
    let gt_edges = gt
        .into_iter()
        .map(|((sub, obj), preds)| GtEdge { sub, obj, preds })
        .collect();
    Ok(SceneInput {
        id: scene.id.clone(),
        points,
        embeddings: None,
        descriptors: Tensor::matrix(pairs.len(), DESCRIPTOR_DIM, desc),
        pairs,
        dist: distance_matrix(&stats),
        labels: scene.labels(),
        targets,
        gt_edges,
    })
}

/// Model outputs for one scene.
#[derive(Clone, Copy, Debug)]
pub struct SceneOutputs {
    pub obj_logits: Var,
    pub pred_logits: Var,
    pub lse_pred: Var,
    pub descriptors: Var,
    pub initial_edges: Var,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub obj: f64,
    pub rel: f64,
    pub lse: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            obj: 0.1,
            rel: 3.0,
            lse: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SgLoss {
    pub total: Var,
    pub obj: Var,
    pub rel: Var,
    pub lse: Var,
}

impl SceneGraphModel {
    pub fn new(cfg: ModelConfig, flags: GnnFlags) -> Self {
        let d = cfg.encoder.embed_dim;
        let encoder = ObjectEncoder::new(cfg.encoder.clone(), ENCODER_PREFIX);
        let relation = RelationEncoder::new(cfg.relation.clone(), d);
        let e = relation.edge_dim();
        let gnn = Gnn::new(cfg.gnn.clone(), flags, d, e);
        Self {
            obj_head: Linear::new("head.obj", d, cfg.n_obj),
            pred_head: Linear::new("head.pred", e, cfg.n_pred),
            cfg,
            flags,
            encoder,
            relation,
            gnn,
        }
    }

    pub fn init<R: Rng>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        self.cfg.validate()?;
        self.encoder.init(store, rng)?;
        self.relation.init(store, rng)?;
        self.gnn.init(store, rng)?;
        self.obj_head.init(store, rng)?;
        self.pred_head.init(store, rng)
    }

    /// Stores frozen embeddings computed with the current encoder.
    pub fn precompute_embeddings(&self, store: &ParameterStore, input: &mut SceneInput) {
        let rows: Vec<Vec<f64>> = input
            .points
            .iter()
            .map(|p| {
                let mut tape = Tape::new();
                let v = tape.constant(p.clone());
                let (z, _) = self.encoder.encode(&mut tape, store, v);
                tape.value(z).data().to_vec()
            })
            .collect();
        input.embeddings = Some(Tensor::from_rows(&rows));
    }

    fn node_embeddings(&self, tape: &mut Tape, store: &ParameterStore, input: &SceneInput) -> Var {
        if let Some(e) = &input.embeddings {
            return tape.constant(e.clone());
        }
        let rows: Vec<Var> = input
            .points
            .iter()
            .map(|p| {
                let v = tape.constant(p.clone());
                self.encoder.encode(tape, store, v).0
            })
            .collect();
        tape.concat_rows(&rows)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore, input: &SceneInput) -> SceneOutputs {
        let nodes = self.node_embeddings(tape, store, input);
        let descriptors = tape.constant(input.descriptors.clone());
        let initial_edges = self.relation.edge_features(tape, store, nodes, &input.pairs, descriptors);
        let state = SceneGraphState {
            nodes,
            edges: initial_edges,
            pairs: input.pairs.clone(),
            dist: input.dist.clone(),
        };
        let out = self.gnn.forward(tape, store, state);
        SceneOutputs {
            obj_logits: self.obj_head.forward(tape, store, out.nodes),
            pred_logits: self.pred_head.forward(tape, store, out.edges),
            lse_pred: self.relation.lse_reconstruct(tape, store, initial_edges),
            descriptors,
            initial_edges,
        }
    }

    /// Class distributions and predicate scores for one scene.
    pub fn predict(&self, store: &ParameterStore, input: &SceneInput) -> SceneDump {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, store, input);
        let n = input.len();
        let p = self.cfg.n_pred;
        let logits = tape.value(out.pred_logits);
        let mut pred_scores = vec![0.0; n * n * p];
        for (e, &(i, j)) in input.pairs.iter().enumerate() {
            for k in 0..p {
                pred_scores[(i * n + j) * p + k] = tensor::sigmoid(logits.get(e, k));
            }
        }
        SceneDump {
            id: input.id.clone(),
            obj_probs: tensor::softmax_rows(tape.value(out.obj_logits)),
            pred_scores,
            n_pred: p,
            gt_labels: input.labels.clone(),
            gt_edges: input.gt_edges.clone(),
        }
    }
}

/// `w.obj * CE + w.rel * BCE + w.lse * L1`. BCE averages over every
/// candidate pair and predicate; a scene without pairs contributes only
/// the object term.
pub fn sg_loss(tape: &mut Tape, out: &SceneOutputs, input: &SceneInput, w: LossWeights) -> SgLoss {
    let obj = tape.cross_entropy(out.obj_logits, &input.labels);
    let (rel, lse) = if input.pairs.is_empty() {
        let z = tape.constant(Tensor::scalar(0.0));
        (z, z)
    } else {
        (
            tape.bce_with_logits(out.pred_logits, &input.targets),
            lse_loss(tape, out.lse_pred, out.descriptors),
        )
    };
    let a = tape.scale(obj, w.obj);
    let b = tape.scale(rel, w.rel);
    let c = tape.scale(lse, w.lse);
    let ab = tape.add(a, b);
    let total = tape.add(ab, c);
    SgLoss { total, obj, rel, lse }
}
