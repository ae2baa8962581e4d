//! Contrastive pretraining of the object encoder and supervised training
//! of the scene-graph model, with per-epoch validation and best-checkpoint
//! selection.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::contrastive::{pretrain_loss, ContrastiveBatch, PretrainWeights, SyntheticModalProvider, DEFAULT_TAU};
use crate::encoder::{points_tensor, ObjectEncoder};
use crate::error::{Error, Result};
use crate::eval::{in_top_k, triplet_recall_at_k, PredictionDump, RankingOptions};
use crate::gnn::GnnFlags;
use crate::model::{prepare_scene, sg_loss, stable_hash, LossWeights, ModelConfig, SceneGraphModel, SceneInput, ENCODER_PREFIX};
use crate::optim::{adam_step, cosine_lr, AdamConfig};
use crate::params::ParameterStore;
use crate::scene::{center, downsample, downsample_with, rotate_z, Point, Scene};
use crate::tape::Tape;

/// Component switches for ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    pub gse: bool,
    pub beg: bool,
    pub lse: bool,
    /// Use the pretrained, frozen object encoder. Off trains the encoder
    /// jointly from random initialization.
    pub ofl: bool,
    pub gating: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self {
            gse: true,
            beg: true,
            lse: true,
            ofl: true,
            gating: true,
        }
    }
}

impl AblationFlags {
    pub fn gnn(&self) -> GnnFlags {
        GnnFlags {
            gse: self.gse,
            beg: self.beg,
            gating: self.gating,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_obj: f64,
    pub lambda_rel: f64,
    pub lambda_lse: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Scenes per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    pub flags: AblationFlags,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_obj: 0.1,
            lambda_rel: 3.0,
            lambda_lse: 1.0,
            lr: 1e-4,
            weight_decay: 0.01,
            epochs: 100,
            batch_size: 2,
            seed: 0,
            flags: AblationFlags::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.lambda_obj, self.lambda_rel, self.lambda_lse].iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("lr must be positive and weight_decay non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            obj: self.lambda_obj,
            rel: self.lambda_rel,
            lse: if self.flags.lse { self.lambda_lse } else { 0.0 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub tau: f64,
    pub lambda_cross: f64,
    pub lambda_reg: f64,
    pub seed: u64,
    /// Std dev of the synthetic image features around the class prototype.
    pub modal_noise: f64,
    /// Seed of the synthetic text/image features.
    pub modal_seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            epochs: 100,
            batch_size: 512,
            tau: DEFAULT_TAU,
            lambda_cross: 1.0,
            lambda_reg: 0.001,
            seed: 0,
            modal_noise: 0.1,
            modal_seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.tau > 0.0) || self.batch_size < 2 {
            return Err(Error::Config("pretraining needs lr > 0, tau > 0 and batch_size >= 2".into()));
        }
        if !(self.lambda_cross >= 0.0) || !(self.lambda_reg >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// One object instance for pretraining.
#[derive(Clone, Debug, PartialEq)]
pub struct PretrainObject {
    pub points: Vec<Point>,
    pub label: usize,
    /// Identifies the instance for its synthetic image features and its
    /// validation downsampling.
    pub key: u64,
}

pub fn objects_from_scenes(scenes: &[Scene]) -> Vec<PretrainObject> {
    scenes
        .iter()
        .flat_map(|s| {
            let base = stable_hash(&s.id);
            s.instances.iter().map(move |inst| PretrainObject {
                points: inst.points.clone(),
                label: inst.label,
                key: base ^ (inst.id as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainEpoch {
    pub epoch: usize,
    pub loss: f64,
    /// Validation top-K accuracy (percent) by nearest text prototype.
    pub top1: f64,
    pub top5: f64,
    pub top10: f64,
}

#[derive(Clone, Debug)]
pub struct PretrainResult {
    /// Encoder parameters without the model prefix.
    pub store: ParameterStore,
    pub history: Vec<PretrainEpoch>,
    pub best_epoch: Option<usize>,
}

/// Top-1/5/10 accuracy of nearest-prototype classification.
pub fn prototype_accuracy(
    encoder: &ObjectEncoder,
    store: &ParameterStore,
    provider: &SyntheticModalProvider,
    objects: &[PretrainObject],
) -> [f64; 3] {
    let mut hits = [0usize; 3];
    let protos = provider.prototypes();
    for o in objects {
        let pts = center(&downsample(&o.points, encoder.cfg.n_points, o.key));
        let z = encoder.embed(store, &pts);
        let sims: Vec<f64> = (0..protos.rows())
            .map(|c| protos.row_slice(c).iter().zip(&z).map(|(a, b)| a * b).sum())
            .collect();
        for (h, k) in hits.iter_mut().zip([1, 5, 10]) {
            *h += in_top_k(&sims, o.label, k) as usize;
        }
    }
    let n = objects.len().max(1) as f64;
    hits.map(|h| 100.0 * h as f64 / n)
}

/// Contrastive pretraining with cosine-decayed Adam. Keeps the parameters
/// of the epoch with the highest summed validation top-1/5/10 accuracy
/// (earliest on ties).
pub fn run_pretraining(
    encoder: &ObjectEncoder,
    n_obj: usize,
    train: &[PretrainObject],
    val: &[PretrainObject],
    cfg: &PretrainConfig,
) -> Result<PretrainResult> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("pretraining needs non-empty train and val splits".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParameterStore::new();
    encoder.init(&mut store, &mut rng)?;
    let provider = SyntheticModalProvider::new(n_obj, encoder.embed_dim(), cfg.modal_seed, cfg.modal_noise)?;
    let weights = PretrainWeights {
        lambda_cross: cfg.lambda_cross,
        lambda_reg: cfg.lambda_reg,
    };
    let batches_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let mut best: Option<(f64, usize, ParameterStore)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let mut anchors = Vec::with_capacity(chunk.len());
            let mut transforms = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let o = &train[i];
                let pts = center(&downsample_with(&o.points, encoder.cfg.n_points, &mut rng));
                let pts = rotate_z(&pts, rng.random_range(0.0..core::f64::consts::TAU));
                let p = tape.constant(points_tensor(&pts));
                let (z, a) = encoder.encode(&mut tape, &store, p);
                anchors.push(z);
                transforms.push(a);
            }
            let anchors = tape.concat_rows(&anchors);
            let labels: Vec<usize> = chunk.iter().map(|&i| train[i].label).collect();
            let keys: Vec<u64> = chunk.iter().map(|&i| train[i].key).collect();
            let batch = ContrastiveBatch::new(labels.clone(), &provider.features(&labels, &keys), cfg.tau)?;
            let loss = pretrain_loss(&mut tape, anchors, &transforms, &batch, weights);
            loss_sum += tape.scalar(loss);
            let grads = tape.backward(loss);
            store.zero_grad();
            store.accumulate_grads(&tape, &grads);
            let adam = AdamConfig {
                lr: cosine_lr(cfg.lr, step, total_steps),
                ..AdamConfig::default()
            };
            adam_step(&mut store, &adam);
            step += 1;
        }
        let [top1, top5, top10] = prototype_accuracy(encoder, &store, &provider, val);
        let score = top1 + top5 + top10;
        log::info!("pretrain epoch {epoch}: loss {:.4} val top1 {top1:.1}", loss_sum / batches_per_epoch as f64);
        history.push(PretrainEpoch {
            epoch,
            loss: loss_sum / batches_per_epoch as f64,
            top1,
            top5,
            top10,
        });
        if best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((score, epoch, store.clone()));
        }
    }
    let (store, best_epoch) = match best {
        Some((_, e, s)) => (s, Some(e)),
        None => (store, None),
    };
    Ok(PretrainResult {
        store: store.extract(ENCODER_PREFIX),
        history,
        best_epoch,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean weighted training loss over scenes.
    pub loss: f64,
    pub obj_loss: f64,
    pub rel_loss: f64,
    /// Unweighted descriptor reconstruction error.
    pub lse_loss: f64,
    /// Validation triplet mean recall at 50 with graph constraint.
    pub val_triplet_mr50: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SgTrainResult {
    pub model: SceneGraphModel,
    pub store: ParameterStore,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

/// Model-side inputs for a list of scenes, with frozen embeddings filled
/// in when the encoder is frozen.
pub fn prepare_inputs(model: &SceneGraphModel, store: &ParameterStore, scenes: &[Scene], frozen: bool) -> Result<Vec<SceneInput>> {
    scenes
        .iter()
        .map(|s| {
            let mut input = prepare_scene(s, model.cfg.encoder.n_points, model.cfg.n_pred)?;
            if frozen {
                model.precompute_embeddings(store, &mut input);
            }
            Ok(input)
        })
        .collect()
}

pub fn predict_dump(model: &SceneGraphModel, store: &ParameterStore, inputs: &[SceneInput]) -> PredictionDump {
    PredictionDump {
        scenes: inputs.iter().map(|i| model.predict(store, i)).collect(),
    }
}

/// Scene-graph training with cosine-decayed AdamW and gradient
/// accumulation over `batch_size` scenes. After each epoch the validation
/// triplet mR@50 selects the kept parameters (earliest on ties); without a
/// validation split the last epoch is kept.
pub fn run_sg_training(
    model_cfg: &ModelConfig,
    train: &[Scene],
    val: &[Scene],
    encoder: Option<&ParameterStore>,
    cfg: &TrainConfig,
) -> Result<SgTrainResult> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("scene-graph training needs training scenes".into()));
    }
    let model = SceneGraphModel::new(model_cfg.clone(), cfg.flags.gnn());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParameterStore::new();
    model.init(&mut store, &mut rng)?;
    let frozen = cfg.flags.ofl;
    if frozen {
        let enc = encoder.ok_or_else(|| Error::Config("a pretrained encoder is required unless ofl is off".into()))?;
        store.assign(ENCODER_PREFIX, enc)?;
        store.set_frozen(ENCODER_PREFIX, true);
    }
    let train_inputs = prepare_inputs(&model, &store, train, frozen)?;
    let val_inputs = prepare_inputs(&model, &store, val, frozen)?;
    let weights = cfg.loss_weights();
    let batches_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParameterStore)> = None;
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 4];
        for chunk in order.chunks(cfg.batch_size) {
            store.zero_grad();
            for &i in chunk {
                let mut tape = Tape::new();
                let out = model.forward(&mut tape, &store, &train_inputs[i]);
                let l = sg_loss(&mut tape, &out, &train_inputs[i], weights);
                for (s, v) in sums.iter_mut().zip([l.total, l.obj, l.rel, l.lse]) {
                    *s += tape.scalar(v);
                }
                let scaled = tape.scale(l.total, 1.0 / chunk.len() as f64);
                let grads = tape.backward(scaled);
                store.accumulate_grads(&tape, &grads);
            }
            let adam = AdamConfig {
                lr: cosine_lr(cfg.lr, step, total_steps),
                weight_decay: cfg.weight_decay,
                ..AdamConfig::default()
            };
            adam_step(&mut store, &adam);
            step += 1;
        }
        let n = train.len() as f64;
        let val_mr = if val_inputs.is_empty() {
            None
        } else {
            let dump = predict_dump(&model, &store, &val_inputs);
            Some(triplet_recall_at_k(&dump, 50, true, RankingOptions::default()).mr.unwrap_or(0.0))
        };
        log::info!("sg epoch {epoch}: loss {:.4} val mR@50 {val_mr:?}", sums[0] / n);
        history.push(EpochRecord {
            epoch,
            loss: sums[0] / n,
            obj_loss: sums[1] / n,
            rel_loss: sums[2] / n,
            lse_loss: sums[3] / n,
            val_triplet_mr50: val_mr,
        });
        let score = val_mr.unwrap_or(f64::INFINITY);
        if val_mr.is_none() || best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((score, epoch, store.clone()));
        }
    }
    let (store, best_epoch) = match best {
        Some((_, e, s)) => (s, Some(e)),
        None => (store, None),
    };
    Ok(SgTrainResult {
        model,
        store,
        history,
        best_epoch,
    })
}
