//! Brute-force recall references: exhaustive enumeration with explicit
//! counting, no sorting.

use ssg_core::eval::{
    object_recall_at_k, predicate_recall_at_k, task_recall_at_k, PredictionDump, RankingOptions, RankingScope, Recall,
    SceneDump, Task,
};

/// Positions taken by repeatedly selecting the best remaining entry, lowest
/// index first on ties.
fn selection_order(scores: &[f64]) -> Vec<usize> {
    let mut taken = vec![false; scores.len()];
    let mut order = Vec::new();
    for _ in 0..scores.len() {
        let mut best: Option<usize> = None;
        for c in 0..scores.len() {
            if !taken[c] && best.is_none_or(|b| scores[c] > scores[b]) {
                best = Some(c);
            }
        }
        let b = best.unwrap();
        taken[b] = true;
        order.push(b);
    }
    order
}

fn in_top(scores: &[f64], target: usize, k: usize) -> bool {
    selection_order(scores).iter().take(k).any(|&c| c == target)
}

fn first_max(scores: &[f64]) -> usize {
    selection_order(scores)[0]
}

fn reduce(items: &[(usize, bool)], n_classes: usize) -> Recall {
    let total = items.len();
    let hit = items.iter().filter(|x| x.1).count();
    let mut rates = Vec::new();
    for c in 0..n_classes {
        let t = items.iter().filter(|x| x.0 == c).count();
        if t > 0 {
            let h = items.iter().filter(|x| x.0 == c && x.1).count();
            rates.push(h as f64 / t as f64);
        }
    }
    Recall {
        r: (total > 0).then(|| 100.0 * hit as f64 / total as f64),
        mr: (!rates.is_empty()).then(|| 100.0 * rates.iter().sum::<f64>() / rates.len() as f64),
    }
}

pub fn object_recall(dump: &PredictionDump, k: usize) -> Recall {
    let mut items = Vec::new();
    for s in &dump.scenes {
        for (i, &l) in s.gt_labels.iter().enumerate() {
            items.push((l, in_top(s.obj_row(i), l, k)));
        }
    }
    reduce(&items, dump.n_obj())
}

pub fn predicate_recall(dump: &PredictionDump, k: usize) -> Recall {
    let mut items = Vec::new();
    for s in &dump.scenes {
        for e in &s.gt_edges {
            for &p in &e.preds {
                items.push((p, in_top(s.pred_row(e.sub, e.obj), p, k)));
            }
        }
    }
    reduce(&items, dump.n_pred())
}

type Key = (usize, usize, usize, usize, usize);

/// Every ranked candidate of pair `(i, j)` as (score, key).
fn pair_candidates(s: &SceneDump, i: usize, j: usize, task: Task, gc: bool, exhaustive: bool) -> Vec<(f64, Key)> {
    let classes = |x: usize| -> Vec<(usize, f64)> {
        match task {
            Task::PredCls => vec![(s.gt_labels[x], 1.0)],
            Task::SgCls if exhaustive => (0..s.n_obj()).map(|c| (c, s.obj_row(x)[c])).collect(),
            Task::SgCls => {
                let c = first_max(s.obj_row(x));
                vec![(c, s.obj_row(x)[c])]
            }
        }
    };
    let row = s.pred_row(i, j);
    let mut out = Vec::new();
    for (cs, ps) in classes(i) {
        for (co, po) in classes(j) {
            for p in 0..s.n_pred {
                if !gc || p == first_max(row) {
                    out.push((ps * row[p] * po, (i, j, p, cs, co)));
                }
            }
        }
    }
    out
}

/// A target is recalled iff it is a candidate and fewer than `k` candidates
/// beat it on score, then on key.
fn recalled(cands: &[(f64, Key)], target: Key, k: usize) -> bool {
    let Some(&(score, _)) = cands.iter().find(|c| c.1 == target) else {
        return false;
    };
    let better = cands.iter().filter(|c| c.0 > score || (c.0 == score && c.1 < target)).count();
    better < k
}

pub fn task_recall(dump: &PredictionDump, task: Task, k: usize, gc: bool, opts: RankingOptions) -> Recall {
    let mut items = Vec::new();
    for s in &dump.scenes {
        let n = s.len();
        let mut scene = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    scene.extend(pair_candidates(s, i, j, task, gc, opts.exhaustive_classes));
                }
            }
        }
        for e in &s.gt_edges {
            let cands = match opts.scope {
                RankingScope::Scene => scene.clone(),
                RankingScope::Edge => pair_candidates(s, e.sub, e.obj, task, gc, opts.exhaustive_classes),
            };
            let (gs, go) = (s.gt_labels[e.sub], s.gt_labels[e.obj]);
            for &p in &e.preds {
                items.push((p, recalled(&cands, (e.sub, e.obj, p, gs, go), k)));
            }
        }
    }
    reduce(&items, dump.n_pred())
}

pub const RANK_KS: [usize; 9] = [1, 2, 3, 4, 5, 10, 20, 50, 100];

pub fn all_options() -> Vec<RankingOptions> {
    let mut out = Vec::new();
    for scope in [RankingScope::Scene, RankingScope::Edge] {
        for exhaustive_classes in [false, true] {
            out.push(RankingOptions { scope, exhaustive_classes });
        }
    }
    out
}

/// Every metric that differs from its reference on `dump`, described.
pub fn metric_mismatches(dump: &PredictionDump) -> Vec<String> {
    let mut bad = Vec::new();
    for k in RANK_KS {
        let (a, b) = (object_recall_at_k(dump, k), object_recall(dump, k));
        if a != b {
            bad.push(format!("object@{k}: {a:?} vs {b:?}"));
        }
        let (a, b) = (predicate_recall_at_k(dump, k), predicate_recall(dump, k));
        if a != b {
            bad.push(format!("predicate@{k}: {a:?} vs {b:?}"));
        }
        for opts in all_options() {
            for task in [Task::SgCls, Task::PredCls] {
                for gc in [true, false] {
                    let (a, b) = (task_recall_at_k(dump, task, k, gc, opts), task_recall(dump, task, k, gc, opts));
                    if a != b {
                        bad.push(format!("{task:?}@{k} gc={gc} {opts:?}: {a:?} vs {b:?}"));
                    }
                }
            }
        }
    }
    bad
}
