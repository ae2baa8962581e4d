//! Recall metrics over prediction dumps, and the diagnostic analyses in
//! [`diagnostics`].

pub mod diagnostics;

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A ground-truth directed edge by instance index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GtEdge {
    pub sub: usize,
    pub obj: usize,
    pub preds: Vec<usize>,
}

/// Model output for one scene plus its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneDump {
    pub id: String,
    /// `N x C` class distributions.
    pub obj_probs: Tensor,
    /// Flattened `N x N x P` predicate scores; the diagonal is ignored.
    pub pred_scores: Vec<f64>,
    pub n_pred: usize,
    pub gt_labels: Vec<usize>,
    pub gt_edges: Vec<GtEdge>,
}

impl SceneDump {
    pub fn len(&self) -> usize {
        self.gt_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gt_labels.is_empty()
    }

    pub fn n_obj(&self) -> usize {
        self.obj_probs.cols()
    }

    pub fn pred_row(&self, i: usize, j: usize) -> &[f64] {
        let (n, p) = (self.len(), self.n_pred);
        let off = (i * n + j) * p;
        &self.pred_scores[off..off + p]
    }

    pub fn obj_row(&self, i: usize) -> &[f64] {
        self.obj_probs.row_slice(i)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.obj_probs.rows() != n {
            return Err(Error::Shape(format!("{}: {} label rows vs {n} instances", self.id, self.obj_probs.rows())));
        }
        if self.pred_scores.len() != n * n * self.n_pred {
            return Err(Error::Shape(format!("{}: predicate tensor has {} entries", self.id, self.pred_scores.len())));
        }
        for i in 0..n {
            let s: f64 = self.obj_row(i).iter().sum();
            if (s - 1.0).abs() > 1e-4 || self.obj_row(i).iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::Invalid(format!("{}: object row {i} is not a distribution", self.id)));
            }
        }
        let c = self.n_obj();
        if let Some(&l) = self.gt_labels.iter().find(|&&l| l >= c) {
            return Err(Error::Invalid(format!("{}: label {l} out of range", self.id)));
        }
        for e in &self.gt_edges {
            if e.sub >= n || e.obj >= n || e.sub == e.obj || e.preds.iter().any(|&p| p >= self.n_pred) {
                return Err(Error::Invalid(format!("{}: bad edge {e:?}", self.id)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PredictionDump {
    pub scenes: Vec<SceneDump>,
}

impl PredictionDump {
    pub fn n_obj(&self) -> usize {
        self.scenes.first().map_or(0, |s| s.n_obj())
    }

    pub fn n_pred(&self) -> usize {
        self.scenes.first().map_or(0, |s| s.n_pred)
    }

    pub fn validate(&self) -> Result<()> {
        let (c, p) = (self.n_obj(), self.n_pred());
        for s in &self.scenes {
            if s.n_obj() != c || s.n_pred != p {
                return Err(Error::Shape(format!("{}: class counts differ across scenes", s.id)));
            }
            s.validate()?;
        }
        Ok(())
    }
}

/// `true` iff `target` is among the `k` best entries of `scores`, ties
/// going to the lower index.
pub fn in_top_k(scores: &[f64], target: usize, k: usize) -> bool {
    rank_of(scores, target) < k
}

pub fn rank_of(scores: &[f64], target: usize) -> usize {
    let t = scores[target];
    scores
        .iter()
        .enumerate()
        .filter(|&(c, &s)| s > t || (s == t && c < target))
        .count()
}

/// Index of the maximum, lowest index on ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

fn percent(hit: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| 100.0 * hit as f64 / total as f64)
}

/// Per-class tallies, reduced to a mean over classes with support.
fn mean_recall(hits: &[usize], totals: &[usize]) -> Option<f64> {
    let rates: Vec<f64> = hits
        .iter()
        .zip(totals)
        .filter(|(_, &t)| t > 0)
        .map(|(&h, &t)| h as f64 / t as f64)
        .collect();
    (!rates.is_empty()).then(|| 100.0 * rates.iter().sum::<f64>() / rates.len() as f64)
}

/// Recall and mean recall as percentages; `None` when nothing was counted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Recall {
    pub r: Option<f64>,
    pub mr: Option<f64>,
}

fn tally(items: impl Iterator<Item = (usize, bool)>, n_classes: usize) -> Recall {
    let mut hits = vec![0usize; n_classes];
    let mut totals = vec![0usize; n_classes];
    for (c, hit) in items {
        totals[c] += 1;
        hits[c] += hit as usize;
    }
    Recall {
        r: percent(hits.iter().sum(), totals.iter().sum()),
        mr: mean_recall(&hits, &totals),
    }
}

pub fn object_recall_at_k(dump: &PredictionDump, k: usize) -> Recall {
    let items = dump
        .scenes
        .iter()
        .flat_map(|s| (0..s.len()).map(move |i| (s.gt_labels[i], in_top_k(s.obj_row(i), s.gt_labels[i], k))));
    tally(items, dump.n_obj())
}

/// Pooled over every ground-truth predicate of every annotated edge.
pub fn predicate_recall_at_k(dump: &PredictionDump, k: usize) -> Recall {
    let items = dump.scenes.iter().flat_map(|s| {
        s.gt_edges.iter().flat_map(move |e| {
            let row = s.pred_row(e.sub, e.obj);
            e.preds.iter().map(move |&p| (p, in_top_k(row, p, k)))
        })
    });
    tally(items, dump.n_pred())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Predicted classes and predicates.
    SgCls,
    /// Ground-truth classes, predicted predicates.
    PredCls,
}

/// Which candidates compete in one ranked list.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankingScope {
    /// All candidates of a scene.
    #[default]
    Scene,
    /// Only candidates of the ground-truth edge's own pair.
    Edge,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankingOptions {
    pub scope: RankingScope,
    /// Rank every class pair per ordered pair rather than the top-1 pair.
    pub exhaustive_classes: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Candidate {
    score: f64,
    sub: usize,
    obj: usize,
    pred: usize,
    cs: usize,
    co: usize,
}

fn by_rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then((a.sub, a.obj, a.pred, a.cs, a.co).cmp(&(b.sub, b.obj, b.pred, b.cs, b.co)))
}

fn class_choices(s: &SceneDump, i: usize, task: Task, opts: RankingOptions) -> Vec<(usize, f64)> {
    match task {
        Task::PredCls => vec![(s.gt_labels[i], 1.0)],
        Task::SgCls if opts.exhaustive_classes => s.obj_row(i).iter().copied().enumerate().collect(),
        Task::SgCls => {
            let c = argmax(s.obj_row(i));
            vec![(c, s.obj_row(i)[c])]
        }
    }
}

fn pair_candidates(s: &SceneDump, i: usize, j: usize, task: Task, gc: bool, opts: RankingOptions, out: &mut Vec<Candidate>) {
    let row = s.pred_row(i, j);
    let preds: Vec<usize> = if gc { vec![argmax(row)] } else { (0..s.n_pred).collect() };
    let subs = class_choices(s, i, task, opts);
    let objs = class_choices(s, j, task, opts);
    for &(cs, ps) in &subs {
        for &(co, po) in &objs {
            for &p in &preds {
                out.push(Candidate {
                    score: ps * row[p] * po,
                    sub: i,
                    obj: j,
                    pred: p,
                    cs,
                    co,
                });
            }
        }
    }
}

/// A ground-truth triplet and whether it was recalled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TripletHit {
    pub sub_class: usize,
    pub pred: usize,
    pub obj_class: usize,
    pub hit: bool,
}

/// Hit flags for every ground-truth triplet of a scene.
pub fn scene_triplet_hits(s: &SceneDump, task: Task, k: usize, gc: bool, opts: RankingOptions) -> Vec<TripletHit> {
    let n = s.len();
    let rank_top = |cands: &mut Vec<Candidate>| {
        cands.sort_by(by_rank);
        cands.truncate(k);
        cands.iter().map(|c| (c.sub, c.obj, c.pred, c.cs, c.co)).collect::<BTreeSet<_>>()
    };
    let mut scene_top = BTreeSet::new();
    if opts.scope == RankingScope::Scene {
        let mut cands = Vec::new();
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                pair_candidates(s, i, j, task, gc, opts, &mut cands);
            }
        }
        scene_top = rank_top(&mut cands);
    }
    let mut hits = Vec::new();
    for e in &s.gt_edges {
        let top = match opts.scope {
            RankingScope::Scene => None,
            RankingScope::Edge => {
                let mut cands = Vec::new();
                pair_candidates(s, e.sub, e.obj, task, gc, opts, &mut cands);
                Some(rank_top(&mut cands))
            }
        };
        let top = top.as_ref().unwrap_or(&scene_top);
        let (gs, go) = (s.gt_labels[e.sub], s.gt_labels[e.obj]);
        for &p in &e.preds {
            hits.push(TripletHit {
                sub_class: gs,
                pred: p,
                obj_class: go,
                hit: top.contains(&(e.sub, e.obj, p, gs, go)),
            });
        }
    }
    hits
}

/// Pooled recall; mean recall is over predicate classes.
pub fn task_recall_at_k(dump: &PredictionDump, task: Task, k: usize, gc: bool, opts: RankingOptions) -> Recall {
    let items = dump
        .scenes
        .iter()
        .flat_map(|s| scene_triplet_hits(s, task, k, gc, opts))
        .map(|h| (h.pred, h.hit));
    tally(items, dump.n_pred())
}

/// Triplet recall: subject, predicate and object must all match.
pub fn triplet_recall_at_k(dump: &PredictionDump, k: usize, gc: bool, opts: RankingOptions) -> Recall {
    task_recall_at_k(dump, Task::SgCls, k, gc, opts)
}

/// Predicate indices split into (head, body, tail) by descending training
/// frequency, ties by index. Remainders go to head, then body.
pub fn frequency_terciles(freqs: &[usize]) -> [Vec<usize>; 3] {
    let mut order: Vec<usize> = (0..freqs.len()).collect();
    order.sort_by(|&a, &b| freqs[b].cmp(&freqs[a]).then(a.cmp(&b)));
    let base = freqs.len() / 3;
    let rem = freqs.len() % 3;
    let sizes = [base + (rem > 0) as usize, base + (rem > 1) as usize, base];
    let body_start = sizes[0];
    let tail_start = sizes[0] + sizes[1];
    [
        order[..body_start].to_vec(),
        order[body_start..tail_start].to_vec(),
        order[tail_start..].to_vec(),
    ]
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    /// Predicate mean recall at K=3 and K=5 within each tercile.
    pub head: [Option<f64>; 2],
    pub body: [Option<f64>; 2],
    pub tail: [Option<f64>; 2],
    /// Triplet recall at K=50 and K=100.
    pub seen: [Option<f64>; 2],
    pub unseen: [Option<f64>; 2],
}

pub const SPLIT_PREDICATE_KS: [usize; 2] = [3, 5];
pub const TRIPLET_KS: [usize; 2] = [50, 100];

fn group_mean_recall(dump: &PredictionDump, k: usize, group: &[usize]) -> Option<f64> {
    let np = dump.n_pred();
    let mut hits = vec![0usize; np];
    let mut totals = vec![0usize; np];
    for s in &dump.scenes {
        for e in &s.gt_edges {
            let row = s.pred_row(e.sub, e.obj);
            for &p in e.preds.iter().filter(|p| group.contains(p)) {
                totals[p] += 1;
                hits[p] += in_top_k(row, p, k) as usize;
            }
        }
    }
    mean_recall(&hits, &totals)
}

pub fn split_metrics(
    dump: &PredictionDump,
    predicate_freqs: &[usize],
    train_triplets: &BTreeSet<(usize, usize, usize)>,
    gc: bool,
    opts: RankingOptions,
) -> SplitMetrics {
    let [head, body, tail] = frequency_terciles(predicate_freqs);
    let per_k = |g: &[usize]| SPLIT_PREDICATE_KS.map(|k| if g.is_empty() { None } else { group_mean_recall(dump, k, g) });
    let mut out = SplitMetrics {
        head: per_k(&head),
        body: per_k(&body),
        tail: per_k(&tail),
        ..SplitMetrics::default()
    };
    for (slot, &k) in TRIPLET_KS.iter().enumerate() {
        let (mut seen, mut unseen) = ((0usize, 0usize), (0usize, 0usize));
        for s in &dump.scenes {
            for h in scene_triplet_hits(s, Task::SgCls, k, gc, opts) {
                let bucket = if train_triplets.contains(&(h.sub_class, h.pred, h.obj_class)) { &mut seen } else { &mut unseen };
                bucket.0 += h.hit as usize;
                bucket.1 += 1;
            }
        }
        out.seen[slot] = percent(seen.0, seen.1);
        out.unseen[slot] = percent(unseen.0, unseen.1);
    }
    out
}

pub const OBJECT_KS: [usize; 3] = [1, 5, 10];
pub const PREDICATE_KS: [usize; 3] = [1, 3, 5];
pub const TASK_KS: [usize; 3] = [20, 50, 100];

/// One row of a metrics report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub metric: String,
    pub k: usize,
    /// `Some(true)` with graph constraint, `Some(false)` without, `None`
    /// when the metric has no constraint.
    pub constraint: Option<bool>,
    pub value: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub entries: Vec<MetricEntry>,
}

impl MetricsReport {
    pub fn push(&mut self, metric: &str, k: usize, constraint: Option<bool>, value: Option<f64>) {
        self.entries.push(MetricEntry {
            metric: metric.into(),
            k,
            constraint,
            value,
        });
    }

    pub fn get(&self, metric: &str, k: usize, constraint: Option<bool>) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.metric == metric && e.k == k && e.constraint == constraint)
            .and_then(|e| e.value)
    }
}

/// Training-set statistics used by the head/body/tail and seen/unseen
/// splits.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainStatistics {
    pub predicate_freqs: Vec<usize>,
    pub triplets: BTreeSet<(usize, usize, usize)>,
}

impl TrainStatistics {
    pub fn from_scenes(scenes: &[crate::scene::Scene], n_pred: usize) -> Self {
        let mut out = Self {
            predicate_freqs: vec![0; n_pred],
            triplets: BTreeSet::new(),
        };
        for s in scenes {
            let labels = s.labels();
            for ((i, j), preds) in s.pair_predicates() {
                for p in preds {
                    out.predicate_freqs[p] += 1;
                    out.triplets.insert((labels[i], p, labels[j]));
                }
            }
        }
        out
    }
}

/// Full metric suite. Triplet and task rows are reported with and without
/// graph constraint; the seen/unseen rows use the constraint.
pub fn metrics_report(dump: &PredictionDump, train: Option<&TrainStatistics>, opts: RankingOptions) -> MetricsReport {
    let mut rep = MetricsReport::default();
    for k in OBJECT_KS {
        let r = object_recall_at_k(dump, k);
        rep.push("object_R", k, None, r.r);
        rep.push("object_mR", k, None, r.mr);
    }
    for k in PREDICATE_KS {
        let r = predicate_recall_at_k(dump, k);
        rep.push("predicate_R", k, None, r.r);
        rep.push("predicate_mR", k, None, r.mr);
    }
    for gc in [true, false] {
        for k in TRIPLET_KS {
            let r = triplet_recall_at_k(dump, k, gc, opts);
            rep.push("triplet_R", k, Some(gc), r.r);
            rep.push("triplet_mR", k, Some(gc), r.mr);
        }
        for (name, task) in [("sgcls", Task::SgCls), ("predcls", Task::PredCls)] {
            for k in TASK_KS {
                let r = task_recall_at_k(dump, task, k, gc, opts);
                rep.push(&format!("{name}_R"), k, Some(gc), r.r);
                rep.push(&format!("{name}_mR"), k, Some(gc), r.mr);
            }
        }
    }
    if let Some(t) = train {
        let sm = split_metrics(dump, &t.predicate_freqs, &t.triplets, true, opts);
        for (name, vals) in [("head_mR", sm.head), ("body_mR", sm.body), ("tail_mR", sm.tail)] {
            for (k, v) in SPLIT_PREDICATE_KS.iter().zip(vals) {
                rep.push(name, *k, None, v);
            }
        }
        for (name, vals) in [("seen_triplet_R", sm.seen), ("unseen_triplet_R", sm.unseen)] {
            for (k, v) in TRIPLET_KS.iter().zip(vals) {
                rep.push(name, *k, Some(true), v);
            }
        }
    }
    rep
}
