//! Scenes, per-instance statistics, pairwise geometric descriptors and the
//! inter-object distance matrix.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

pub type Point = [f64; 3];

/// Bounding-box sides shorter than this are clamped so volume and maximum
/// side length stay strictly positive (planar objects such as walls).
pub const MIN_EXTENT: f64 = 1e-6;

pub const DESCRIPTOR_DIM: usize = 11;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceStats {
    pub mu: [f64; 3],
    /// Population standard deviation per axis.
    pub sigma: [f64; 3],
    /// Axis-aligned bounding-box side lengths.
    pub bbox: [f64; 3],
    pub volume: f64,
    pub max_len: f64,
}

/// Mean, population standard deviation and clamped axis-aligned extents of
/// a point set.
pub fn compute_instance_stats(points: &[Point]) -> Result<InstanceStats> {
    if points.len() < 2 {
        return Err(Error::Invalid(format!(
            "instance statistics need at least 2 points, got {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let mut mu = [0.0; 3];
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            mu[a] += p[a];
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    mu.iter_mut().for_each(|m| *m /= n);
    if (0..3).all(|a| hi[a] == lo[a]) {
        return Err(Error::Invalid("all points coincide".into()));
    }
    let mut var = [0.0; 3];
    for p in points {
        for a in 0..3 {
            let d = p[a] - mu[a];
            var[a] += d * d;
        }
    }
    let sigma = var.map(|v| math::sqrt(v / n));
    let bbox = [0, 1, 2].map(|a| (hi[a] - lo[a]).max(MIN_EXTENT));
    Ok(InstanceStats {
        mu,
        sigma,
        bbox,
        volume: bbox[0] * bbox[1] * bbox[2],
        max_len: bbox[0].max(bbox[1]).max(bbox[2]),
    })
}

/// The 11-dimensional pairwise descriptor: differences of means, standard
/// deviations and box sides, then log volume ratio and log max-side ratio.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeometricDescriptor(pub [f64; DESCRIPTOR_DIM]);

impl GeometricDescriptor {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn geometric_descriptor(si: &InstanceStats, sj: &InstanceStats) -> Result<GeometricDescriptor> {
    for (tag, s) in [("subject", si), ("object", sj)] {
        if !(s.volume > 0.0 && s.max_len > 0.0) {
            return Err(Error::InvalidStats(format!(
                "{tag} has volume {} and max length {}",
                s.volume, s.max_len
            )));
        }
    }
    let mut g = [0.0; DESCRIPTOR_DIM];
    for a in 0..3 {
        g[a] = si.mu[a] - sj.mu[a];
        g[3 + a] = si.sigma[a] - sj.sigma[a];
        g[6 + a] = si.bbox[a] - sj.bbox[a];
    }
    g[9] = math::ln(si.volume / sj.volume);
    g[10] = math::ln(si.max_len / sj.max_len);
    Ok(GeometricDescriptor(g))
}

/// Euclidean distances between instance centroids, `N x N`.
pub fn distance_matrix(stats: &[InstanceStats]) -> Tensor {
    let n = stats.len();
    let mut d = Tensor::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = centroid_distance(&stats[i], &stats[j]);
            d.set(i, j, v);
            d.set(j, i, v);
        }
    }
    d
}

pub fn centroid_distance(a: &InstanceStats, b: &InstanceStats) -> f64 {
    let s: f64 = (0..3).map(|k| (a.mu[k] - b.mu[k]) * (a.mu[k] - b.mu[k])).sum();
    math::sqrt(s)
}

/// Exactly `n` points: without replacement when the cloud has at least `n`
/// points, with replacement otherwise.
pub fn downsample(points: &[Point], n: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    downsample_with(points, n, &mut rng)
}

pub fn downsample_with<R: Rng>(points: &[Point], n: usize, rng: &mut R) -> Vec<Point> {
    assert!(!points.is_empty(), "cannot downsample an empty cloud");
    if points.len() >= n {
        index::sample(rng, points.len(), n)
            .into_iter()
            .map(|i| points[i])
            .collect()
    } else {
        (0..n)
            .map(|_| points[rng.random_range(0..points.len())])
            .collect()
    }
}

pub fn rotate_z(points: &[Point], angle: f64) -> Vec<Point> {
    let (s, c) = (math::sin(angle), math::cos(angle));
    points
        .iter()
        .map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]])
        .collect()
}

/// Rigid rotation about the vertical axis by a seeded uniform angle.
pub fn random_z_rotation(points: &[Point], seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let angle = rng.random_range(0.0..core::f64::consts::TAU);
    rotate_z(points, angle)
}

/// Translates the cloud so its mean sits at the origin.
pub fn center(points: &[Point]) -> Vec<Point> {
    let n = points.len().max(1) as f64;
    let mut mu = [0.0; 3];
    for p in points {
        for a in 0..3 {
            mu[a] += p[a] / n;
        }
    }
    points
        .iter()
        .map(|p| [p[0] - mu[0], p[1] - mu[1], p[2] - mu[2]])
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: u32,
    pub label: usize,
    pub points: Vec<Point>,
}

impl Instance {
    pub fn stats(&self) -> Result<InstanceStats> {
        compute_instance_stats(&self.points)
    }
}

/// A directed, multi-label edge. An empty predicate list means "none".
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub sub: u32,
    pub obj: u32,
    pub preds: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    pub instances: Vec<Instance>,
    pub edges: Vec<Edge>,
    pub split: Split,
}

impl Scene {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.instances.iter().map(|i| i.label).collect()
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.instances.iter().position(|i| i.id == id)
    }

    pub fn stats(&self) -> Result<Vec<InstanceStats>> {
        self.instances.iter().map(Instance::stats).collect()
    }

    /// Ground-truth predicate sets keyed by ordered instance-index pair.
    /// Pairs without an entry (or with an empty set) carry no predicate.
    pub fn pair_predicates(&self) -> BTreeMap<(usize, usize), Vec<usize>> {
        let mut out = BTreeMap::new();
        for e in &self.edges {
            if let (Some(i), Some(j)) = (self.index_of(e.sub), self.index_of(e.obj)) {
                out.insert((i, j), e.preds.clone());
            }
        }
        out
    }

    /// Checks endpoint existence, self-loops, duplicates and label ranges.
    pub fn validate(&self, n_obj: usize, n_pred: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(format!("scene {}: {m}", self.id)));
        let mut ids = BTreeMap::new();
        for inst in &self.instances {
            if inst.label >= n_obj {
                return bad(format!("instance {} label {} >= {n_obj}", inst.id, inst.label));
            }
            if ids.insert(inst.id, ()).is_some() {
                return bad(format!("duplicate instance id {}", inst.id));
            }
        }
        let mut seen = BTreeMap::new();
        for e in &self.edges {
            if e.sub == e.obj {
                return bad(format!("self edge on {}", e.sub));
            }
            if !ids.contains_key(&e.sub) || !ids.contains_key(&e.obj) {
                return bad(format!("edge ({}, {}) has a missing endpoint", e.sub, e.obj));
            }
            if seen.insert((e.sub, e.obj), ()).is_some() {
                return bad(format!("duplicate edge ({}, {})", e.sub, e.obj));
            }
            if let Some(&p) = e.preds.iter().find(|&&p| p >= n_pred) {
                return bad(format!("predicate {p} >= {n_pred}"));
            }
        }
        Ok(())
    }
}
