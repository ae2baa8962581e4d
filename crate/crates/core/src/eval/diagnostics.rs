//! Object-uncertainty diagnostics: entropy of class posteriors against
//! predicate errors, the error-category table, the object-marginalised
//! predicate factorization, and class-level embedding similarity.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{argmax, PredictionDump};
use crate::error::{Error, Result};
use crate::math;

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(dist: &[f64]) -> f64 {
    -dist.iter().filter(|&&p| p > 0.0).map(|&p| p * math::ln(p)).sum::<f64>()
}

/// One retained ground-truth edge.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyRecord {
    /// Mean entropy of the subject and object posteriors.
    pub e_obj: f64,
    /// Top-1 predicate is not a ground-truth predicate.
    pub error: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub errors: usize,
    /// `errors / count`, absent for empty bins.
    pub rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyAnalysis {
    pub records: Vec<EntropyRecord>,
    pub bins: Vec<HistogramBin>,
}

/// Ground-truth edges whose endpoints are both top-1 correct, binned by
/// `e_obj` into `n_bins` equal-width bins over the observed range. A
/// zero-width range gives a single bin.
pub fn entropy_error_histogram(dump: &PredictionDump, n_bins: usize) -> Result<EntropyAnalysis> {
    if n_bins < 2 {
        return Err(Error::Config(format!("need at least 2 bins, got {n_bins}")));
    }
    let mut records = Vec::new();
    for s in &dump.scenes {
        let correct: Vec<bool> = (0..s.len()).map(|i| argmax(s.obj_row(i)) == s.gt_labels[i]).collect();
        for e in &s.gt_edges {
            if !(correct[e.sub] && correct[e.obj]) {
                continue;
            }
            let e_obj = 0.5 * (entropy(s.obj_row(e.sub)) + entropy(s.obj_row(e.obj)));
            let top = argmax(s.pred_row(e.sub, e.obj));
            records.push(EntropyRecord {
                e_obj,
                error: !e.preds.contains(&top),
            });
        }
    }
    let bins = bin_records(&records, n_bins);
    Ok(EntropyAnalysis { records, bins })
}

fn bin_records(records: &[EntropyRecord], n_bins: usize) -> Vec<HistogramBin> {
    if records.is_empty() {
        return Vec::new();
    }
    let lo = records.iter().map(|r| r.e_obj).fold(f64::INFINITY, f64::min);
    let hi = records.iter().map(|r| r.e_obj).fold(f64::NEG_INFINITY, f64::max);
    let n = if hi > lo { n_bins } else { 1 };
    let width = (hi - lo) / n as f64;
    let mut bins: Vec<HistogramBin> = (0..n)
        .map(|b| HistogramBin {
            lo: lo + b as f64 * width,
            hi: if b + 1 == n { hi } else { lo + (b + 1) as f64 * width },
            count: 0,
            errors: 0,
            rate: None,
        })
        .collect();
    for r in records {
        let b = if width > 0.0 { (((r.e_obj - lo) / width) as usize).min(n - 1) } else { 0 };
        bins[b].count += 1;
        bins[b].errors += r.error as usize;
    }
    for b in &mut bins {
        b.rate = (b.count > 0).then(|| b.errors as f64 / b.count as f64);
    }
    bins
}

/// Predicate-error rate (percent) among ground-truth edges grouped by how
/// many endpoints are top-1 correct.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorCategories {
    pub both_correct: Option<f64>,
    pub one_correct: Option<f64>,
    pub both_wrong: Option<f64>,
    /// Edge counts per group, same order.
    pub counts: [usize; 3],
}

pub fn error_category_table(dump: &PredictionDump) -> ErrorCategories {
    let mut errors = [0usize; 3];
    let mut counts = [0usize; 3];
    for s in &dump.scenes {
        let correct: Vec<bool> = (0..s.len()).map(|i| argmax(s.obj_row(i)) == s.gt_labels[i]).collect();
        for e in &s.gt_edges {
            let group = 2 - (correct[e.sub] as usize + correct[e.obj] as usize);
            counts[group] += 1;
            errors[group] += !e.preds.contains(&argmax(s.pred_row(e.sub, e.obj))) as usize;
        }
    }
    let rate = |g: usize| (counts[g] > 0).then(|| 100.0 * errors[g] as f64 / counts[g] as f64);
    ErrorCategories {
        both_correct: rate(0),
        one_correct: rate(1),
        both_wrong: rate(2),
        counts,
    }
}

const NORM_TOL: f64 = 1e-9;

fn check_distribution(what: &str, p: &[f64]) -> Result<()> {
    let s: f64 = p.iter().sum();
    if p.iter().any(|&x| !(x >= 0.0)) || (s - 1.0).abs() > NORM_TOL {
        return Err(Error::Invalid(format!("{what} is not normalized (sum {s})")));
    }
    Ok(())
}

/// `P(e | o_i, o_j)` for every class pair: `C x C` rows of length `E`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalTable {
    pub n_classes: usize,
    pub n_outcomes: usize,
    pub data: Vec<f64>,
}

impl ConditionalTable {
    pub fn new(n_classes: usize, n_outcomes: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_classes * n_classes * n_outcomes {
            return Err(Error::Shape("conditional table size".into()));
        }
        let t = Self {
            n_classes,
            n_outcomes,
            data,
        };
        for a in 0..n_classes {
            for b in 0..n_classes {
                check_distribution(&format!("P(e | {a}, {b})"), t.row(a, b))?;
            }
        }
        Ok(t)
    }

    pub fn row(&self, a: usize, b: usize) -> &[f64] {
        let off = (a * self.n_classes + b) * self.n_outcomes;
        &self.data[off..off + self.n_outcomes]
    }
}

/// `sum_{a,b} P(e | a, b) P(a | z_i) P(b | z_j)`.
pub fn marginalize(table: &ConditionalTable, post_i: &[f64], post_j: &[f64]) -> Result<Vec<f64>> {
    if post_i.len() != table.n_classes || post_j.len() != table.n_classes {
        return Err(Error::Shape("posterior length".into()));
    }
    check_distribution("P(o | z_i)", post_i)?;
    check_distribution("P(o | z_j)", post_j)?;
    let mut out = vec![0.0; table.n_outcomes];
    for (a, &pa) in post_i.iter().enumerate() {
        for (b, &pb) in post_j.iter().enumerate() {
            for (o, &pe) in out.iter_mut().zip(table.row(a, b)) {
                *o += pe * pa * pb;
            }
        }
    }
    Ok(out)
}

/// Max absolute deviation between the object-marginalised predicate
/// distribution and a directly specified `P(e | z_i, z_j)`.
pub fn factorization_check(table: &ConditionalTable, post_i: &[f64], post_j: &[f64], direct: &[f64]) -> Result<f64> {
    check_distribution("P(e | z_i, z_j)", direct)?;
    let mixed = marginalize(table, post_i, post_j)?;
    if mixed.len() != direct.len() {
        return Err(Error::Shape("outcome count".into()));
    }
    Ok(mixed.iter().zip(direct).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

/// A finite generative world in which the edge depends on the
/// embeddings only through the classes and the two objects are drawn
/// independently.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteWorld {
    pub prior: Vec<f64>,
    /// `P(z | o)`: `C` rows over `Z` observation symbols.
    pub likelihood: Vec<Vec<f64>>,
    pub cond: ConditionalTable,
}

impl DiscreteWorld {
    pub fn new(prior: Vec<f64>, likelihood: Vec<Vec<f64>>, cond: ConditionalTable) -> Result<Self> {
        check_distribution("prior", &prior)?;
        if likelihood.len() != prior.len() || cond.n_classes != prior.len() {
            return Err(Error::Shape("class counts disagree".into()));
        }
        for (c, row) in likelihood.iter().enumerate() {
            check_distribution(&format!("P(z | {c})"), row)?;
        }
        Ok(Self { prior, likelihood, cond })
    }

    /// `P(o | z)` by Bayes' rule.
    pub fn posterior(&self, z: usize) -> Vec<f64> {
        let joint: Vec<f64> = self.prior.iter().zip(&self.likelihood).map(|(p, l)| p * l[z]).collect();
        let total: f64 = joint.iter().sum();
        joint.iter().map(|j| j / total).collect()
    }

    /// `P(e | z_i, z_j)` by enumerating the full joint over
    /// `(o_i, o_j, e)` and conditioning.
    pub fn direct_edge_posterior(&self, zi: usize, zj: usize) -> Vec<f64> {
        let c = self.prior.len();
        let mut num = vec![0.0; self.cond.n_outcomes];
        let mut evidence = 0.0;
        for a in 0..c {
            for b in 0..c {
                let w = self.prior[a] * self.likelihood[a][zi] * self.prior[b] * self.likelihood[b][zj];
                for (e, &pe) in self.cond.row(a, b).iter().enumerate() {
                    num[e] += w * pe;
                    evidence += w * pe;
                }
            }
        }
        num.iter().map(|x| x / evidence).collect()
    }
}

/// Mean pairwise cosine similarity between classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingDiagnostics {
    /// Classes present, ascending; indexes the matrix.
    pub classes: Vec<usize>,
    /// Entry `(a, b)`: mean cosine over members of `a` and `b`, excluding
    /// self-pairs; absent for a single-member class on the diagonal.
    pub matrix: Vec<Vec<Option<f64>>>,
    pub intra_mean: Option<f64>,
    pub inter_mean: Option<f64>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = math::sqrt(a.iter().map(|x| x * x).sum());
    let nb = math::sqrt(b.iter().map(|x| x * x).sum());
    dot / (na * nb).max(1e-300)
}

pub fn embedding_diagnostics(embeddings: &[Vec<f64>], labels: &[usize]) -> Result<EmbeddingDiagnostics> {
    if embeddings.len() != labels.len() {
        return Err(Error::Shape("one label per embedding".into()));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Invalid("need at least two classes".into()));
    }
    let members: Vec<Vec<usize>> = classes
        .iter()
        .map(|&c| (0..labels.len()).filter(|&i| labels[i] == c).collect())
        .collect();
    let k = classes.len();
    let mut matrix = vec![vec![None; k]; k];
    for a in 0..k {
        for b in a..k {
            let (mut sum, mut n) = (0.0, 0usize);
            for &x in &members[a] {
                for &y in &members[b] {
                    if x != y {
                        sum += cosine(&embeddings[x], &embeddings[y]);
                        n += 1;
                    }
                }
            }
            let v = (n > 0).then(|| sum / n as f64);
            matrix[a][b] = v;
            matrix[b][a] = v;
        }
    }
    let mean = |vals: Vec<f64>| (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
    let intra = mean((0..k).filter_map(|a| matrix[a][a]).collect());
    let inter = mean((0..k).flat_map(|a| (0..k).filter(move |&b| b != a).map(move |b| (a, b))).filter_map(|(a, b)| matrix[a][b]).collect());
    Ok(EmbeddingDiagnostics {
        classes,
        matrix,
        intra_mean: intra,
        inter_mean: inter,
    })
}
