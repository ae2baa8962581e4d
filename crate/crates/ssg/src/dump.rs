//! Prediction dumps as JSONL, one scene per line, with the probability
//! tensors as base64 little-endian `f32`.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use ssg_core::eval::{GtEdge, PredictionDump, SceneDump};
use ssg_core::Tensor;

use crate::{read_text, write_bytes, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneRecord {
    id: String,
    n_instances: usize,
    n_classes: usize,
    n_pred: usize,
    /// `n_instances x n_classes`.
    obj_probs: String,
    /// `n_instances x n_instances x n_pred`.
    pred_scores: String,
    gt_labels: Vec<usize>,
    gt_edges: Vec<GtEdge>,
}

fn encode_f32(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|&x| (x as f32).to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode_f32(text: &str, expected: usize) -> std::result::Result<Vec<f64>, String> {
    let bytes = STANDARD.decode(text).map_err(|e| e.to_string())?;
    if bytes.len() != expected * 4 {
        return Err(format!("expected {expected} f32 values, found {} bytes", bytes.len()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect())
}

pub fn encode_dump(dump: &PredictionDump) -> Result<String> {
    let mut out = String::new();
    for s in &dump.scenes {
        let rec = SceneRecord {
            id: s.id.clone(),
            n_instances: s.len(),
            n_classes: s.n_obj(),
            n_pred: s.n_pred,
            obj_probs: encode_f32(s.obj_probs.data()),
            pred_scores: encode_f32(&s.pred_scores),
            gt_labels: s.gt_labels.clone(),
            gt_edges: s.gt_edges.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).map_err(|e| Error::invalid(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

/// Parses and validates a dump; errors name the offending line.
pub fn decode_dump(text: &str, path: &Path) -> Result<PredictionDump> {
    let mut scenes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: SceneRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let n = rec.n_instances;
        let probs = decode_f32(&rec.obj_probs, n * rec.n_classes).map_err(|m| err(format!("obj_probs: {m}")))?;
        let preds = decode_f32(&rec.pred_scores, n * n * rec.n_pred).map_err(|m| err(format!("pred_scores: {m}")))?;
        let scene = SceneDump {
            id: rec.id,
            obj_probs: Tensor::matrix(n, rec.n_classes, probs),
            pred_scores: preds,
            n_pred: rec.n_pred,
            gt_labels: rec.gt_labels,
            gt_edges: rec.gt_edges,
        };
        scene.validate().map_err(|e| err(e.to_string()))?;
        scenes.push(scene);
    }
    let dump = PredictionDump { scenes };
    dump.validate()?;
    Ok(dump)
}

pub fn save_dump(path: &Path, dump: &PredictionDump) -> Result<()> {
    write_bytes(path, encode_dump(dump)?.as_bytes())
}

pub fn load_dump(path: &Path) -> Result<PredictionDump> {
    decode_dump(&read_text(path)?, path)
}
