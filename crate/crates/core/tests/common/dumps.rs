//! Random small prediction dumps with deliberately frequent score ties.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ssg_core::eval::{GtEdge, PredictionDump, SceneDump};
use ssg_core::Tensor;

pub const MAX_NODES: usize = 6;
pub const MAX_CLASSES: usize = 5;
pub const MAX_PREDICATES: usize = 4;

/// A distribution from small integer weights, so equal weights give
/// bit-equal probabilities.
fn quantized_distribution(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut w: Vec<u32> = (0..n).map(|_| rng.random_range(0..4)).collect();
    if w.iter().all(|&x| x == 0) {
        w[rng.random_range(0..n)] = 1;
    }
    let total: u32 = w.iter().sum();
    w.iter().map(|&x| x as f64 / total as f64).collect()
}

pub fn random_scene_dump(rng: &mut ChaCha8Rng, id: &str, n_obj: usize, n_pred: usize) -> SceneDump {
    let n = rng.random_range(1..=MAX_NODES);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| quantized_distribution(rng, n_obj)).collect();
    let pred_scores = (0..n * n * n_pred).map(|_| rng.random_range(0..=4) as f64 * 0.25).collect();
    let mut gt_edges = Vec::new();
    for sub in 0..n {
        for obj in (0..n).filter(|&o| o != sub) {
            if rng.random_bool(0.5) {
                let mut preds: Vec<usize> = (0..n_pred).filter(|_| rng.random_bool(0.4)).collect();
                if preds.is_empty() {
                    preds.push(rng.random_range(0..n_pred));
                }
                gt_edges.push(GtEdge { sub, obj, preds });
            }
        }
    }
    SceneDump {
        id: id.into(),
        obj_probs: Tensor::from_rows(&rows),
        pred_scores,
        n_pred,
        gt_labels: (0..n).map(|_| rng.random_range(0..n_obj)).collect(),
        gt_edges,
    }
}

/// One to three scenes with `N <= 6`, `C <= 5`, `P <= 4`.
pub fn random_dump(seed: u64) -> PredictionDump {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_obj = rng.random_range(1..=MAX_CLASSES);
    let n_pred = rng.random_range(1..=MAX_PREDICATES);
    let scenes = (0..rng.random_range(1..=3))
        .map(|s| random_scene_dump(&mut rng, &format!("s{s}"), n_obj, n_pred))
        .collect();
    PredictionDump { scenes }
}

/// Mass `peak` on `label`, the rest spread evenly.
fn peaked(n_obj: usize, label: usize, peak: f64) -> Vec<f64> {
    let rest = (1.0 - peak) / (n_obj - 1) as f64;
    (0..n_obj).map(|c| if c == label { peak } else { rest }).collect()
}

/// Scenes of object pairs whose class posteriors are correct at top-1 but
/// increasingly flat, with the predicate flipped with probability growing
/// linearly in the flatness. `edges` ground-truth edges in total.
pub fn entropy_trend_dump(seed: u64, edges: usize) -> PredictionDump {
    const N_OBJ: usize = 5;
    const N_PRED: usize = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scenes = (0..edges)
        .map(|e| {
            let t: f64 = rng.random_range(0.0..1.0);
            // Peak from 0.95 down to 0.3, always above the other classes.
            let peak = 0.95 - 0.65 * t;
            let labels = [rng.random_range(0..N_OBJ), rng.random_range(0..N_OBJ)];
            let rows: Vec<Vec<f64>> = labels.iter().map(|&l| peaked(N_OBJ, l, peak)).collect();
            let gt = rng.random_range(0..N_PRED);
            let wrong = rng.random_bool(0.05 + 0.8 * t);
            let top = if wrong { (gt + rng.random_range(1..N_PRED)) % N_PRED } else { gt };
            let mut pred_scores = vec![0.0; 2 * 2 * N_PRED];
            for k in 0..N_PRED {
                pred_scores[N_PRED + k] = if k == top { 0.9 } else { 0.1 };
            }
            SceneDump {
                id: format!("e{e}"),
                obj_probs: Tensor::from_rows(&rows),
                pred_scores,
                n_pred: N_PRED,
                gt_labels: labels.to_vec(),
                gt_edges: vec![GtEdge { sub: 0, obj: 1, preds: vec![gt] }],
            }
        })
        .collect();
    PredictionDump { scenes }
}
