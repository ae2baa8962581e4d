//! Random contrastive batches and scalar-loop references for each loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use ssg_core::contrastive::{coupled_text_terms, npc_negative_gradient, synthetic_modal_provider, ContrastiveBatch};
use ssg_core::{ParameterStore, Tape, Tensor};

pub const MAX_BATCH: usize = 16;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, d: usize) -> Tensor {
    let data: Vec<Vec<f64>> = (0..rows)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect();
            let n = dot(&v, &v).sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();
    Tensor::from_rows(&data)
}

/// Unit anchors and a batch with `B <= 16`, up to 5 classes, a random
/// temperature, and some image sets emptied.
pub fn random_batch(seed: u64) -> (Tensor, ContrastiveBatch) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = rng.random_range(2..=MAX_BATCH);
    let n_obj = rng.random_range(1..=5usize);
    let d = rng.random_range(8..=12usize);
    let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..n_obj)).collect();
    let mut feats = synthetic_modal_provider(n_obj, d, seed, 0.4, &labels).expect("provider");
    for set in feats.images.iter_mut() {
        if rng.random_bool(0.15) {
            *set = Tensor::zeros(0, d);
        }
    }
    let tau = rng.random_range(0.05..1.0);
    let anchors = unit_rows(&mut rng, b, d);
    (anchors, ContrastiveBatch::new(labels, &feats, tau).expect("batch"))
}

fn sim(anchors: &Tensor, i: usize, v: &[f64], tau: f64) -> f64 {
    dot(anchors.row_slice(i), v) / tau
}

fn positives(b: &ContrastiveBatch, i: usize) -> Vec<usize> {
    (0..b.len()).filter(|&p| b.labels[p] == b.labels[i]).collect()
}

fn negatives(b: &ContrastiveBatch, i: usize) -> Vec<usize> {
    (0..b.len()).filter(|&r| b.labels[r] != b.labels[i]).collect()
}

fn images(b: &ContrastiveBatch, r: usize) -> Vec<&[f64]> {
    (0..b.images[r].rows()).map(|k| b.images[r].row_slice(k)).collect()
}

/// Visual term of anchor `i`, or `None` when no negative has an image.
pub fn visual_term(z: &Tensor, b: &ContrastiveBatch, i: usize) -> Option<f64> {
    let mut denom = 0.0;
    let mut any = false;
    for r in negatives(b, i) {
        for img in images(b, r) {
            denom += sim(z, i, img, b.tau).exp();
            any = true;
        }
    }
    if !any {
        return None;
    }
    let pos = positives(b, i);
    let mut total = 0.0;
    for &p in &pos {
        for img in images(b, p) {
            let num = sim(z, i, img, b.tau).exp();
            total += -(num / denom).ln();
        }
    }
    Some(total / pos.len() as f64)
}

/// Text term of anchor `i`, or `None` without negatives.
pub fn text_term(z: &Tensor, b: &ContrastiveBatch, i: usize) -> Option<f64> {
    let neg = negatives(b, i);
    if neg.is_empty() {
        return None;
    }
    let own = sim(z, i, b.text.row_slice(b.labels[i]), b.tau).exp();
    let denom: f64 = neg.iter().map(|&r| sim(z, i, b.text.row_slice(b.labels[r]), b.tau).exp()).sum();
    Some(-(own / denom).ln())
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

pub fn visual_reference(z: &Tensor, b: &ContrastiveBatch) -> f64 {
    mean(&(0..b.len()).filter_map(|i| visual_term(z, b, i)).collect::<Vec<_>>())
}

pub fn text_reference(z: &Tensor, b: &ContrastiveBatch) -> f64 {
    mean(&(0..b.len()).filter_map(|i| text_term(z, b, i)).collect::<Vec<_>>())
}

/// Anchors whose visual term exists also have a text term.
pub fn cross_reference(z: &Tensor, b: &ContrastiveBatch) -> f64 {
    let terms: Vec<f64> = (0..b.len())
        .filter_map(|i| visual_term(z, b, i).map(|v| v + text_term(z, b, i).expect("has negatives")))
        .collect();
    mean(&terms)
}

/// Coupled text term: the denominator runs over every batch member.
pub fn coupled_term(z: &Tensor, b: &ContrastiveBatch, i: usize) -> f64 {
    let own = sim(z, i, b.text.row_slice(b.labels[i]), b.tau);
    let u: f64 = (0..b.len()).map(|r| sim(z, i, b.text.row_slice(b.labels[r]), b.tau).exp()).sum();
    -own + u.ln()
}

/// Softmax cross entropy of `logits = z P^T / tau` against `labels`.
pub fn softmax_ce(z: &Tensor, labels: &[usize], prototypes: &Tensor, tau: f64) -> f64 {
    let terms: Vec<f64> = labels
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let e: Vec<f64> = (0..prototypes.rows()).map(|k| sim(z, i, prototypes.row_slice(k), tau).exp()).collect();
            -(e[c] / e.iter().sum::<f64>()).ln()
        })
        .collect();
    mean(&terms)
}

/// `sum ||I - A A^T||_F^2` over the transforms, entry by entry.
pub fn reg_reference(transforms: &[Tensor]) -> f64 {
    let mut total = 0.0;
    for a in transforms {
        let n = a.rows();
        for r in 0..n {
            for c in 0..n {
                let aat = dot(a.row_slice(r), a.row_slice(c));
                let d = if r == c { 1.0 } else { 0.0 } - aat;
                total += d * d;
            }
        }
    }
    total
}

/// `N / (|P(i)| e^{s_ii/tau} + N)` with `N` summed over negatives.
pub fn npc_multiplier_reference(z: &Tensor, b: &ContrastiveBatch, i: usize) -> f64 {
    let n_tilde: f64 = negatives(b, i).iter().map(|&r| sim(z, i, b.text.row_slice(b.labels[r]), b.tau).exp()).sum();
    let own = sim(z, i, b.text.row_slice(b.labels[i]), b.tau).exp();
    n_tilde / (positives(b, i).len() as f64 * own + n_tilde)
}

/// Largest absolute gap, over every anchor and coordinate, between the tape
/// gradient of the coupled text loss and the closed-form negative gradient.
pub fn coupling_gradient_gap(seed: u64) -> f64 {
    let (anchors, batch) = random_batch(seed);
    let mut store = ParameterStore::new();
    store.insert("z", anchors.clone()).unwrap();
    let mut tape = Tape::new();
    let z = tape.param(&store, "z");
    let terms = coupled_text_terms(&mut tape, z, &batch);
    let loss = tape.sum(terms);
    let grads = tape.backward(loss);
    let g = grads.get(z).expect("anchor gradient");
    let mut worst: f64 = 0.0;
    for i in 0..batch.len() {
        let closed = npc_negative_gradient(&anchors, &batch, i);
        for (a, c) in g.row_slice(i).iter().zip(&closed) {
            worst = worst.max((-a - c).abs());
        }
    }
    worst
}
