//! End-to-end runs on the synthetic datasets, shared by the training tests
//! and the acceptance suite.

use ssg_core::encoder::ObjectEncoder;
use ssg_core::eval::diagnostics::{embedding_diagnostics, EmbeddingDiagnostics};
use ssg_core::eval::{object_recall_at_k, predicate_recall_at_k, triplet_recall_at_k, PredictionDump, RankingOptions};
use ssg_core::model::{ModelConfig, ENCODER_PREFIX};
use ssg_core::scene::{center, downsample, Scene};
use ssg_core::synth::{generate_dataset, SyntheticConfig};
use ssg_core::trainer::{
    objects_from_scenes, predict_dump, prepare_inputs, run_pretraining, run_sg_training, AblationFlags, PretrainConfig,
    PretrainResult, SgTrainResult, TrainConfig,
};
use ssg_core::ParameterStore;

/// Pretraining schedule for the small synthetic sets: the full-scale batch
/// of 512 would make one step per epoch.
pub fn pretrain_config(seed: u64) -> PretrainConfig {
    PretrainConfig {
        epochs: 50,
        batch_size: 8,
        seed,
        ..PretrainConfig::default()
    }
}

pub fn tiny() -> (SyntheticConfig, Vec<Scene>, Vec<Scene>) {
    let cfg = SyntheticConfig::tiny();
    let (train, val) = generate_dataset(&cfg).unwrap();
    (cfg, train, val)
}

pub fn pretrain(model: &ModelConfig, train: &[Scene], val: &[Scene], cfg: &PretrainConfig) -> PretrainResult {
    let enc = ObjectEncoder::new(model.encoder.clone(), ENCODER_PREFIX);
    run_pretraining(&enc, model.n_obj, &objects_from_scenes(train), &objects_from_scenes(val), cfg).unwrap()
}

/// Class-level cosine structure of the pretrained embeddings of `scenes`.
pub fn separation(model: &ModelConfig, encoder: &ParameterStore, scenes: &[Scene]) -> EmbeddingDiagnostics {
    let enc = ObjectEncoder::new(model.encoder.clone(), "");
    let objects = objects_from_scenes(scenes);
    let emb: Vec<Vec<f64>> = objects
        .iter()
        .map(|o| enc.embed(encoder, &center(&downsample(&o.points, model.encoder.n_points, o.key))))
        .collect();
    let labels: Vec<usize> = objects.iter().map(|o| o.label).collect();
    embedding_diagnostics(&emb, &labels).unwrap()
}

pub fn dump_for(run: &SgTrainResult, scenes: &[Scene], frozen: bool) -> PredictionDump {
    let inputs = prepare_inputs(&run.model, &run.store, scenes, frozen).unwrap();
    predict_dump(&run.model, &run.store, &inputs)
}

/// Step size used for the short synthetic schedules; the full-scale 1e-4
/// is too slow to fit within a few hundred epochs.
pub const DESK_LR: f64 = 1e-3;

pub struct Overfit {
    pub object_r1: f64,
    pub predicate_r1: f64,
    pub history: Vec<f64>,
}

/// Trains on the tiny set's training scenes, keeping the last epoch, and
/// scores the same scenes.
pub fn overfit_tiny(epochs: usize) -> Overfit {
    let (cfg, train, val) = tiny();
    let model = ModelConfig::desk(cfg.n_obj, cfg.n_pred);
    let enc = pretrain(&model, &train, &val, &pretrain_config(0));
    let tc = TrainConfig {
        epochs,
        lr: DESK_LR,
        ..TrainConfig::default()
    };
    let run = run_sg_training(&model, &train, &[], Some(&enc.store), &tc).unwrap();
    let dump = dump_for(&run, &train, true);
    Overfit {
        object_r1: object_recall_at_k(&dump, 1).r.unwrap(),
        predicate_r1: predicate_recall_at_k(&dump, 1).r.unwrap(),
        history: run.history.iter().map(|h| h.loss).collect(),
    }
}

/// Full model first, then each component removed in turn.
pub const ABLATIONS: [(&str, AblationFlags); 4] = [
    ("full", AblationFlags { gse: true, beg: true, lse: true, ofl: true, gating: true }),
    ("-gse", AblationFlags { gse: false, beg: true, lse: true, ofl: true, gating: true }),
    ("-beg", AblationFlags { gse: true, beg: false, lse: true, ofl: true, gating: true }),
    ("-lse", AblationFlags { gse: true, beg: true, lse: false, ofl: true, gating: true }),
];

pub const BENCHMARK_SCENES: usize = 40;
pub const BENCHMARK_EPOCHS: usize = 60;

/// Held-out triplet mR@50 (graph constraint) of every ablation row on the
/// 40-scene benchmark generated with `seed`. Training keeps the last
/// epoch, so the held-out scenes play no part in model selection.
pub fn ablation_benchmark(seed: u64) -> Vec<(&'static str, f64)> {
    let cfg = SyntheticConfig {
        n_scenes: BENCHMARK_SCENES,
        seed,
        ..SyntheticConfig::default()
    };
    let (train, val) = generate_dataset(&cfg).unwrap();
    let model = ModelConfig::desk(cfg.n_obj, cfg.n_pred);
    let enc = pretrain(&model, &train, &val, &pretrain_config(seed));
    ABLATIONS
        .iter()
        .map(|&(name, flags)| {
            let tc = TrainConfig {
                epochs: BENCHMARK_EPOCHS,
                lr: DESK_LR,
                seed,
                flags,
                ..TrainConfig::default()
            };
            let run = run_sg_training(&model, &train, &[], Some(&enc.store), &tc).unwrap();
            let dump = dump_for(&run, &val, true);
            (name, triplet_recall_at_k(&dump, 50, true, RankingOptions::default()).mr.unwrap_or(0.0))
        })
        .collect()
}
