//! Decoupled cross-modal contrastive losses for object pretraining, the
//! coupled and CE-like variants used for analysis, their gradient
//! multipliers, and a synthetic stand-in for image/text features.
//!
//! All similarities are dot products; callers pass unit-norm anchors.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::encoder::reg_loss;
use crate::error::{Error, Result};
use crate::math;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_TAU: f64 = 0.07;
pub const DEFAULT_LAMBDA_CROSS: f64 = 1.0;
pub const DEFAULT_LAMBDA_REG: f64 = 0.001;

/// Max cosine allowed between two class prototypes.
pub const MAX_PROTOTYPE_COSINE: f64 = 0.99;

/// Text prototypes (`C x d`, one unit row per class) and per-instance image
/// sets (`n_i x d`, possibly empty).
#[derive(Clone, Debug, PartialEq)]
pub struct ModalFeatures {
    pub text: Tensor,
    pub images: Vec<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveBatch {
    pub labels: Vec<usize>,
    /// Class text prototypes, `C x d`.
    pub text: Tensor,
    /// Image set of each anchor, `n_i x d`.
    pub images: Vec<Tensor>,
    pub tau: f64,
}

/// A per-anchor loss vector restricted to the anchors that contributed.
#[derive(Clone, Debug)]
pub struct AnchorLosses {
    /// `k x 1` column, one row per entry of `anchors`.
    pub per_anchor: Var,
    pub anchors: Vec<usize>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit(v: &mut [f64]) {
    let n = math::sqrt(dot(v, v));
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

impl ContrastiveBatch {
    pub fn new(labels: Vec<usize>, features: &ModalFeatures, tau: f64) -> Result<Self> {
        if features.images.len() != labels.len() {
            return Err(Error::Shape("one image set per anchor".into()));
        }
        if let Some(&c) = labels.iter().find(|&&c| c >= features.text.rows()) {
            return Err(Error::Invalid(alloc::format!("label {c} has no text prototype")));
        }
        if !(tau > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        Ok(Self {
            labels,
            text: features.text.clone(),
            images: features.images.clone(),
            tau,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.text.cols()
    }

    pub fn positives(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let c = self.labels[i];
        (0..self.len()).filter(move |&p| self.labels[p] == c)
    }

    pub fn negatives(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let c = self.labels[i];
        (0..self.len()).filter(move |&r| self.labels[r] != c)
    }

    fn has_negative_text(&self, i: usize) -> bool {
        self.negatives(i).next().is_some()
    }

    fn has_negative_image(&self, i: usize) -> bool {
        self.negatives(i).any(|r| self.images[r].rows() > 0)
    }

    /// Own-class text prototype of every anchor, `B x d`.
    fn anchor_text(&self) -> Tensor {
        let rows: Vec<Vec<f64>> = self.labels.iter().map(|&c| self.text.row_slice(c).to_vec()).collect();
        Tensor::from_rows(&rows)
    }

    /// All images stacked (`M x d`) with the batch index owning each row.
    fn stacked_images(&self) -> (Tensor, Vec<usize>) {
        let d = self.dim();
        let mut data = Vec::new();
        let mut owner = Vec::new();
        for (b, set) in self.images.iter().enumerate() {
            data.extend_from_slice(set.data());
            owner.extend(core::iter::repeat_n(b, set.rows()));
        }
        (Tensor::matrix(owner.len(), d, data), owner)
    }
}

fn warn_skipped(kind: &str, skipped: &[usize]) {
    if !skipped.is_empty() {
        log::warn!("{kind} loss: skipping anchors without negatives: {skipped:?}");
    }
}

fn mean_or_zero(tape: &mut Tape, col: Var) -> Var {
    if tape.value(col).is_empty() {
        tape.constant(Tensor::scalar(0.0))
    } else {
        tape.mean(col)
    }
}

fn rows_of(tape: &mut Tape, anchors: Var, idx: &[usize]) -> Var {
    let idx: Vec<Option<usize>> = idx.iter().map(|&i| Some(i)).collect();
    tape.gather_rows(anchors, &idx)
}

/// Per-anchor visual terms over anchors having at least one negative image.
pub fn visual_terms(tape: &mut Tape, anchors: Var, batch: &ContrastiveBatch) -> AnchorLosses {
    let (keep, skipped): (Vec<usize>, Vec<usize>) = (0..batch.len()).partition(|&i| batch.has_negative_image(i));
    warn_skipped("visual", &skipped);
    visual_terms_for(tape, anchors, batch, &keep)
}

fn visual_terms_for(tape: &mut Tape, anchors: Var, batch: &ContrastiveBatch, keep: &[usize]) -> AnchorLosses {
    let (images, owner) = batch.stacked_images();
    let m = owner.len();
    let z = rows_of(tape, anchors, keep);
    let img_t = tape.constant(crate::tensor::transpose(&images));
    let sims = tape.matmul(z, img_t);
    let logits = tape.scale(sims, 1.0 / batch.tau);

    let mut neg_mask = Vec::with_capacity(keep.len() * m);
    let mut pos_weight = Vec::with_capacity(keep.len() * m);
    let mut lse_coeff = Vec::with_capacity(keep.len());
    for &i in keep {
        let c = batch.labels[i];
        let n_pos = batch.positives(i).count() as f64;
        let mut pos_images = 0usize;
        for &o in &owner {
            let positive = batch.labels[o] == c;
            neg_mask.push(!positive);
            pos_weight.push(if positive { 1.0 / n_pos } else { 0.0 });
            pos_images += positive as usize;
        }
        lse_coeff.push(pos_images as f64 / n_pos);
    }
    let lse = tape.masked_logsumexp_rows(logits, &neg_mask);
    let coeff = tape.constant(Tensor::matrix(keep.len(), 1, lse_coeff));
    let denom = tape.mul(lse, coeff);
    let w = tape.constant(Tensor::matrix(keep.len(), m, pos_weight));
    let weighted = tape.mul(logits, w);
    let numer = tape.sum_rows(weighted);
    let per_anchor = tape.sub(denom, numer);
    AnchorLosses {
        per_anchor,
        anchors: keep.to_vec(),
    }
}

/// Per-anchor text terms over anchors having at least one negative.
pub fn text_terms(tape: &mut Tape, anchors: Var, batch: &ContrastiveBatch) -> AnchorLosses {
    let (keep, skipped): (Vec<usize>, Vec<usize>) = (0..batch.len()).partition(|&i| batch.has_negative_text(i));
    warn_skipped("text", &skipped);
    text_terms_for(tape, anchors, batch, &keep, false)
}

/// With `coupled`, the denominator runs over the whole batch.
fn text_terms_for(tape: &mut Tape, anchors: Var, batch: &ContrastiveBatch, keep: &[usize], coupled: bool) -> AnchorLosses {
    let b = batch.len();
    let z = rows_of(tape, anchors, keep);
    let text_t = tape.constant(crate::tensor::transpose(&batch.anchor_text()));
    let sims = tape.matmul(z, text_t);
    let logits = tape.scale(sims, 1.0 / batch.tau);
    let mask: Vec<bool> = keep
        .iter()
        .flat_map(|&i| (0..b).map(move |r| coupled || batch.labels[r] != batch.labels[i]))
        .collect();
    let lse = tape.masked_logsumexp_rows(logits, &mask);
    let pos = tape.select_per_row(logits, keep);
    let per_anchor = tape.sub(lse, pos);
    AnchorLosses {
        per_anchor,
        anchors: keep.to_vec(),
    }
}

/// Visual loss averaged over contributing anchors.
pub fn visual_contrastive_loss(tape: &mut Tape, anchors: Var, batch: &ContrastiveBatch) -> Var {
    let t = visual_terms(tape, anchors, batch);
    mean_or_zero(tape, t.per_anchor)
}

/// Text loss averaged over contributing anchors.
pub fn text_contrastive_loss(tape: &mut Tape, anchors: Var, batch: &ContrastiveBatch) -> Var {
    let t = text_terms(tape, anchors, batch);
    mean_or_zero(tape, t.per_anchor)
}

/// Mean over contributing anchors of visual plus text terms. An anchor
/// contributes when it has a negative with at least one image.
pub fn cross_modal_loss(tape: &mut Tape, anchors: Var, batch: &ContrastiveBatch) -> Var {
    let (keep, skipped): (Vec<usize>, Vec<usize>) = (0..batch.len()).partition(|&i| batch.has_negative_image(i));
    warn_skipped("cross-modal", &skipped);
    let v = visual_terms_for(tape, anchors, batch, &keep);
    let t = text_terms_for(tape, anchors, batch, &keep, false);
    let both = tape.add(v.per_anchor, t.per_anchor);
    mean_or_zero(tape, both)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PretrainWeights {
    pub lambda_cross: f64,
    pub lambda_reg: f64,
}

impl Default for PretrainWeights {
    fn default() -> Self {
        Self {
            lambda_cross: DEFAULT_LAMBDA_CROSS,
            lambda_reg: DEFAULT_LAMBDA_REG,
        }
    }
}

/// `lambda_reg * sum(reg(A)) + lambda_cross * cross_modal_loss`.
pub fn pretrain_loss(tape: &mut Tape, anchors: Var, transforms: &[Var], batch: &ContrastiveBatch, w: PretrainWeights) -> Var {
    let cross = cross_modal_loss(tape, anchors, batch);
    let mut total = tape.scale(cross, w.lambda_cross);
    for &a in transforms {
        let r = reg_loss(tape, a);
        let r = tape.scale(r, w.lambda_reg);
        total = tape.add(total, r);
    }
    total
}

/// Per-anchor coupled text terms, `B x 1`, whose denominator includes
/// positives.
pub fn coupled_text_terms(tape: &mut Tape, anchors: Var, batch: &ContrastiveBatch) -> Var {
    let all: Vec<usize> = (0..batch.len()).collect();
    text_terms_for(tape, anchors, batch, &all, true).per_anchor
}

pub fn coupled_text_loss(tape: &mut Tape, anchors: Var, batch: &ContrastiveBatch) -> Var {
    let t = coupled_text_terms(tape, anchors, batch);
    mean_or_zero(tape, t)
}

fn anchor_sims(anchor: &[f64], batch: &ContrastiveBatch, i: usize) -> (f64, f64) {
    let own = math::exp(dot(anchor, batch.text.row_slice(batch.labels[i])) / batch.tau);
    let neg: f64 = batch
        .negatives(i)
        .map(|n| math::exp(dot(anchor, batch.text.row_slice(batch.labels[n])) / batch.tau))
        .sum();
    (own, neg)
}

/// Gradient multiplier of the coupled text loss for anchor `i`:
/// `N / (|P(i)| e^{s_ii/tau} + N)`.
pub fn npc_multiplier(anchors: &Tensor, batch: &ContrastiveBatch, i: usize) -> f64 {
    let (own, neg) = anchor_sims(anchors.row_slice(i), batch, i);
    let p = batch.positives(i).count() as f64 * own;
    neg / (p + neg)
}

/// Closed form of the negative gradient of anchor `i`'s coupled text term
/// with respect to the anchor.
pub fn npc_negative_gradient(anchors: &Tensor, batch: &ContrastiveBatch, i: usize) -> Vec<f64> {
    let z = anchors.row_slice(i);
    let (_, neg) = anchor_sims(z, batch, i);
    let q = npc_multiplier(anchors, batch, i);
    let mut out = batch.text.row_slice(batch.labels[i]).to_vec();
    for n in batch.negatives(i) {
        let t = batch.text.row_slice(batch.labels[n]);
        let w = math::exp(dot(z, t) / batch.tau) / neg;
        out.iter_mut().zip(t).for_each(|(o, &x)| *o -= w * x);
    }
    out.iter_mut().for_each(|o| *o *= q / batch.tau);
    out
}

/// Per-anchor CE-like terms over all class prototypes, `B x 1`.
pub fn ce_like_terms(tape: &mut Tape, anchors: Var, labels: &[usize], prototypes: &Tensor, tau: f64) -> Var {
    let p_t = tape.constant(crate::tensor::transpose(prototypes));
    let sims = tape.matmul(anchors, p_t);
    let logits = tape.scale(sims, 1.0 / tau);
    let mask = vec![true; labels.len() * prototypes.rows()];
    let lse = tape.masked_logsumexp_rows(logits, &mask);
    let pos = tape.select_per_row(logits, labels);
    tape.sub(lse, pos)
}

pub fn ce_like_loss(tape: &mut Tape, anchors: Var, labels: &[usize], prototypes: &Tensor, tau: f64) -> Var {
    let t = ce_like_terms(tape, anchors, labels, prototypes, tau);
    mean_or_zero(tape, t)
}

/// Share of the CE-like denominator held by the other classes.
pub fn ce_like_multiplier(anchor: &[f64], label: usize, prototypes: &Tensor, tau: f64) -> f64 {
    let logits: Vec<f64> = (0..prototypes.rows()).map(|c| dot(anchor, prototypes.row_slice(c)) / tau).collect();
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| math::exp(l - mx)).collect();
    let total: f64 = e.iter().sum();
    (total - e[label]) / total
}

/// Deterministic stand-in for image and text features: one random unit
/// prototype per class, and per instance 1 to 4 noisy, renormalized copies.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticModalProvider {
    prototypes: Tensor,
    noise: f64,
    seed: u64,
}

impl SyntheticModalProvider {
    pub fn new(n_obj: usize, d: usize, seed: u64, noise: f64) -> Result<Self> {
        if d < 8 {
            return Err(Error::Config(alloc::format!("feature dim {d} < 8")));
        }
        if n_obj == 0 {
            return Err(Error::Config("need at least one class".into()));
        }
        if !(noise >= 0.0) || !noise.is_finite() {
            return Err(Error::Config("noise must be a finite non-negative number".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n_obj);
        for c in 0..n_obj {
            let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            unit(&mut v);
            for (o, other) in rows.iter().enumerate() {
                let cos = dot(&v, other);
                if cos >= MAX_PROTOTYPE_COSINE {
                    return Err(Error::Invalid(alloc::format!("prototypes {o} and {c} have cosine {cos}")));
                }
            }
            rows.push(v);
        }
        Ok(Self {
            prototypes: Tensor::from_rows(&rows),
            noise,
            seed,
        })
    }

    pub fn prototypes(&self) -> &Tensor {
        &self.prototypes
    }

    pub fn dim(&self) -> usize {
        self.prototypes.cols()
    }

    /// Image set for one instance. `key` identifies the instance (and, for
    /// augmented views, the draw) so repeated calls are reproducible.
    pub fn images(&self, class: usize, key: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ key.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1));
        let n = rng.random_range(1..=4usize);
        let d = self.dim();
        let proto = self.prototypes.row_slice(class);
        let normal = Normal::new(0.0, self.noise.max(f64::MIN_POSITIVE)).expect("valid std dev");
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            let mut v: Vec<f64> = proto
                .iter()
                .map(|&p| if self.noise == 0.0 { p } else { p + normal.sample(&mut rng) })
                .collect();
            unit(&mut v);
            data.extend(v);
        }
        Tensor::matrix(n, d, data)
    }

    pub fn features(&self, labels: &[usize], keys: &[u64]) -> ModalFeatures {
        ModalFeatures {
            text: self.prototypes.clone(),
            images: labels.iter().zip(keys).map(|(&c, &k)| self.images(c, k)).collect(),
        }
    }
}

/// Convenience constructor with per-instance keys `0..labels.len()`.
pub fn synthetic_modal_provider(n_obj: usize, d: usize, seed: u64, noise: f64, labels: &[usize]) -> Result<ModalFeatures> {
    let p = SyntheticModalProvider::new(n_obj, d, seed, noise)?;
    let keys: Vec<u64> = (0..labels.len() as u64).collect();
    Ok(p.features(labels, &keys))
}
