//! Synthetic scene generator.
//!
//! Object classes are parametric solids (box, ellipsoid, cylinder) with
//! class-specific extents; predicates are geometric rules over instance
//! statistics, so every label can be recomputed from the stored points.
//! Coordinates are rounded to 9 significant digits before labelling, which
//! makes the JSONL encoding lossless.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::scene::{centroid_distance, compute_instance_stats, rotate_z, Edge, Instance, InstanceStats, Point, Scene, Split};

/// A predicate holds for an ordered pair `(i, j)` iff every condition that is
/// set holds. `dz` is the subject centroid height minus the object's;
/// volume ratio is `v_i / v_j`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredicateRule {
    pub name: String,
    pub max_dist: Option<f64>,
    pub min_dist: Option<f64>,
    pub min_dz: Option<f64>,
    pub max_dz: Option<f64>,
    pub max_abs_dz: Option<f64>,
    pub min_volume_ratio: Option<f64>,
    pub max_volume_ratio: Option<f64>,
}

impl PredicateRule {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.into(),
            ..Self::default()
        }
    }

    fn conditions(&self) -> [Option<f64>; 7] {
        [
            self.max_dist,
            self.min_dist,
            self.min_dz,
            self.max_dz,
            self.max_abs_dz,
            self.min_volume_ratio,
            self.max_volume_ratio,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(format!("rule `{}`: {m}", self.name)));
        if self.conditions().iter().all(Option::is_none) {
            return err("has no condition");
        }
        if self.conditions().iter().flatten().any(|v| !v.is_finite()) {
            return err("non-finite threshold");
        }
        let nonneg = [self.max_dist, self.min_dist, self.max_abs_dz];
        if nonneg.iter().flatten().any(|&v| v < 0.0) {
            return err("negative distance threshold");
        }
        let ratios = [self.min_volume_ratio, self.max_volume_ratio];
        if ratios.iter().flatten().any(|&v| v <= 0.0) {
            return err("volume ratio must be positive");
        }
        let empty = |lo: Option<f64>, hi: Option<f64>| matches!((lo, hi), (Some(a), Some(b)) if a >= b);
        if empty(self.min_dist, self.max_dist)
            || empty(self.min_dz, self.max_dz)
            || empty(self.min_volume_ratio, self.max_volume_ratio)
        {
            return err("lower bound is not below upper bound");
        }
        if let (Some(m), Some(lo)) = (self.max_abs_dz, self.min_dz) {
            if lo >= m {
                return err("min_dz exceeds max_abs_dz");
            }
        }
        if let (Some(m), Some(hi)) = (self.max_abs_dz, self.max_dz) {
            if hi <= -m {
                return err("max_dz below -max_abs_dz");
            }
        }
        Ok(())
    }

    pub fn holds(&self, si: &InstanceStats, sj: &InstanceStats) -> bool {
        let d = centroid_distance(si, sj);
        let dz = si.mu[2] - sj.mu[2];
        let ratio = si.volume / sj.volume;
        self.max_dist.is_none_or(|t| d < t)
            && self.min_dist.is_none_or(|t| d > t)
            && self.min_dz.is_none_or(|t| dz > t)
            && self.max_dz.is_none_or(|t| dz < t)
            && self.max_abs_dz.is_none_or(|t| math::abs(dz) <= t)
            && self.min_volume_ratio.is_none_or(|t| ratio > t)
            && self.max_volume_ratio.is_none_or(|t| ratio < t)
    }
}

/// Predicate labels of the ordered pair `(i, j)` under `rules`.
pub fn label_pair(rules: &[PredicateRule], si: &InstanceStats, sj: &InstanceStats) -> Vec<usize> {
    rules
        .iter()
        .enumerate()
        .filter(|(_, r)| r.holds(si, sj))
        .map(|(k, _)| k)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_obj: usize,
    pub n_pred: usize,
    pub n_scenes: usize,
    /// Trailing fraction of scenes tagged `val`.
    pub val_fraction: f64,
    pub min_instances: usize,
    pub max_instances: usize,
    pub points_per_instance: usize,
    pub rules: Vec<PredicateRule>,
    pub seed: u64,
    /// Explicit per-class sampling weights. `None` means Zipf-like weights
    /// `1 / (c + 1)^zipf_exponent`.
    pub class_weights: Option<Vec<f64>>,
    pub zipf_exponent: f64,
    /// Side length of the square floor area objects are scattered over.
    pub room_size: f64,
    /// Objects are lifted by a uniform amount in `[0, max_lift]`.
    pub max_lift: f64,
    pub point_noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_obj: 8,
            n_pred: 5,
            n_scenes: 40,
            val_fraction: 0.2,
            min_instances: 4,
            max_instances: 7,
            points_per_instance: 384,
            rules: vec![
                PredicateRule { min_dz: Some(0.35), ..PredicateRule::named("above") },
                PredicateRule { max_dz: Some(-0.35), ..PredicateRule::named("below") },
                PredicateRule { max_dist: Some(1.6), max_abs_dz: Some(0.35), ..PredicateRule::named("near") },
                PredicateRule { min_volume_ratio: Some(2.5), ..PredicateRule::named("bigger than") },
                PredicateRule { max_volume_ratio: Some(0.4), ..PredicateRule::named("smaller than") },
            ],
            seed: 0,
            class_weights: None,
            zipf_exponent: 1.0,
            room_size: 4.0,
            max_lift: 1.5,
            point_noise: 0.005,
        }
    }
}

impl SyntheticConfig {
    /// Ten scenes (eight for training) with four object classes and three
    /// mutually exclusive height/proximity predicates.
    pub fn tiny() -> Self {
        Self {
            n_obj: 4,
            n_pred: 3,
            n_scenes: 10,
            val_fraction: 0.2,
            min_instances: 3,
            max_instances: 5,
            points_per_instance: 256,
            rules: vec![
                PredicateRule { min_dz: Some(0.3), ..PredicateRule::named("above") },
                PredicateRule { max_dz: Some(-0.3), ..PredicateRule::named("below") },
                PredicateRule { max_dist: Some(1.8), max_abs_dz: Some(0.3), ..PredicateRule::named("near") },
            ],
            class_weights: Some(vec![1.0; 4]),
            room_size: 3.0,
            max_lift: 1.2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.n_obj == 0 || self.n_pred == 0 {
            return err("n_obj and n_pred must be positive".into());
        }
        if self.rules.len() != self.n_pred {
            return err(format!("{} predicate rules for n_pred = {}", self.rules.len(), self.n_pred));
        }
        self.rules.iter().try_for_each(PredicateRule::validate)?;
        if self.min_instances < 2 || self.min_instances > self.max_instances {
            return err(format!(
                "instance range [{}, {}] must satisfy 2 <= min <= max",
                self.min_instances, self.max_instances
            ));
        }
        if self.points_per_instance < 8 {
            return err("points_per_instance must be at least 8".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return err("val_fraction must be in [0, 1)".into());
        }
        if let Some(w) = &self.class_weights {
            if w.len() != self.n_obj {
                return err(format!("{} class weights for n_obj = {}", w.len(), self.n_obj));
            }
            if w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) || w.iter().all(|&x| x == 0.0) {
                return err("class weights must be finite, non-negative and not all zero".into());
            }
        }
        if !(self.room_size > 0.0 && self.max_lift >= 0.0 && self.point_noise >= 0.0) {
            return err("room_size must be positive; max_lift and point_noise non-negative".into());
        }
        Ok(())
    }

    pub fn weights(&self) -> Vec<f64> {
        match &self.class_weights {
            Some(w) => w.clone(),
            None => (0..self.n_obj)
                .map(|c| 1.0 / math::powf((c + 1) as f64, self.zipf_exponent))
                .collect(),
        }
    }

    pub fn num_val(&self) -> usize {
        math::floor(self.n_scenes as f64 * self.val_fraction + 0.5) as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolidKind {
    Box,
    Ellipsoid,
    Cylinder,
}

/// Shape prototype of one object class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassShape {
    pub kind: SolidKind,
    pub extents: [f64; 3],
}

/// Class prototypes depend only on the seed and the class count.
pub fn class_shapes(n_obj: usize, seed: u64) -> Vec<ClassShape> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c1a5_5e5u64);
    (0..n_obj)
        .map(|c| {
            let kind = match c % 3 {
                0 => SolidKind::Box,
                1 => SolidKind::Ellipsoid,
                _ => SolidKind::Cylinder,
            };
            // Size grows with class index so same-kind classes stay apart.
            let base = 0.35 * math::powf(1.45, (c / 3) as f64) + 0.1 * (c % 3) as f64;
            let aspect = [
                rng.random_range(0.6..1.6),
                rng.random_range(0.6..1.6),
                rng.random_range(0.4..2.0),
            ];
            let extents = aspect.map(|a| base * a);
            ClassShape { kind, extents }
        })
        .collect()
}

/// Rounds to 9 significant digits, the precision of the JSONL encoding.
pub fn quantize(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

fn sample_solid<R: Rng>(shape: &ClassShape, jitter: [f64; 3], n: usize, rng: &mut R) -> Vec<Point> {
    let e = [0, 1, 2].map(|a| shape.extents[a] * jitter[a] / 2.0);
    let mut pts = Vec::with_capacity(n);
    while pts.len() < n {
        let u = [
            rng.random_range(-1.0..1.0f64),
            rng.random_range(-1.0..1.0f64),
            rng.random_range(-1.0..1.0f64),
        ];
        let keep = match shape.kind {
            SolidKind::Box => true,
            SolidKind::Ellipsoid => u[0] * u[0] + u[1] * u[1] + u[2] * u[2] <= 1.0,
            SolidKind::Cylinder => u[0] * u[0] + u[1] * u[1] <= 1.0,
        };
        if keep {
            pts.push([u[0] * e[0], u[1] * e[1], u[2] * e[2]]);
        }
    }
    pts
}

/// Generates `(train, val)` scene lists. Deterministic per config.
pub fn generate_dataset(cfg: &SyntheticConfig) -> Result<(Vec<Scene>, Vec<Scene>)> {
    cfg.validate()?;
    let shapes = class_shapes(cfg.n_obj, cfg.seed);
    let classes = WeightedIndex::new(cfg.weights()).map_err(|e| Error::Config(format!("class weights: {e}")))?;
    let noise = Normal::new(0.0, cfg.point_noise.max(1e-300)).expect("valid std dev");
    let n_val = cfg.num_val();
    let n_train = cfg.n_scenes - n_val;

    let mut train = Vec::with_capacity(n_train);
    let mut val = Vec::with_capacity(n_val);
    for s in 0..cfg.n_scenes {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(s as u64));
        let n_inst = rng.random_range(cfg.min_instances..=cfg.max_instances);
        let mut instances = Vec::with_capacity(n_inst);
        let mut stats = Vec::with_capacity(n_inst);
        for k in 0..n_inst {
            let label = classes.sample(&mut rng);
            let shape = &shapes[label];
            let jitter = [0; 3].map(|_| rng.random_range(0.9..1.1));
            let local = sample_solid(shape, jitter, cfg.points_per_instance, &mut rng);
            let yaw = rng.random_range(0.0..core::f64::consts::TAU);
            let rotated = rotate_z(&local, yaw);
            let cx = rng.random_range(0.0..cfg.room_size);
            let cy = rng.random_range(0.0..cfg.room_size);
            let cz = shape.extents[2] * jitter[2] / 2.0 + rng.random_range(0.0..=cfg.max_lift);
            let points: Vec<Point> = rotated
                .iter()
                .map(|p| {
                    let mut q = [p[0] + cx, p[1] + cy, p[2] + cz];
                    if cfg.point_noise > 0.0 {
                        for v in &mut q {
                            *v += noise.sample(&mut rng);
                        }
                    }
                    q.map(quantize)
                })
                .collect();
            stats.push(compute_instance_stats(&points)?);
            instances.push(Instance { id: k as u32, label, points });
        }
        let mut edges = Vec::new();
        for i in 0..n_inst {
            for j in 0..n_inst {
                if i == j {
                    continue;
                }
                let preds = label_pair(&cfg.rules, &stats[i], &stats[j]);
                if !preds.is_empty() {
                    edges.push(Edge { sub: i as u32, obj: j as u32, preds });
                }
            }
        }
        let split = if s < n_train { Split::Train } else { Split::Val };
        let scene = Scene { id: format!("scene_{s:04}"), instances, edges, split };
        match split {
            Split::Train => train.push(scene),
            Split::Val => val.push(scene),
        }
    }
    Ok((train, val))
}
