//! A two-class, two-predicate world where the edge depends on the
//! observations only through the classes.

use ssg_core::eval::diagnostics::{entropy, factorization_check, marginalize, ConditionalTable, DiscreteWorld};

/// `P(e | a, b)` rows in order (0,0), (0,1), (1,0), (1,1).
pub const TABLE: [f64; 8] = [0.9, 0.1, 0.3, 0.7, 0.6, 0.4, 0.2, 0.8];

pub fn table() -> ConditionalTable {
    ConditionalTable::new(2, 2, TABLE.to_vec()).unwrap()
}

pub fn world() -> DiscreteWorld {
    DiscreteWorld::new(vec![0.6, 0.4], vec![vec![0.8, 0.2], vec![0.3, 0.7]], table()).unwrap()
}

/// Largest deviation of the factorized mixture, over every observation
/// pair of the world and one posterior pair worked out by hand.
pub fn max_deviation() -> f64 {
    let w = world();
    let mut worst: f64 = 0.0;
    for zi in 0..2 {
        for zj in 0..2 {
            let d = factorization_check(&w.cond, &w.posterior(zi), &w.posterior(zj), &w.direct_edge_posterior(zi, zj));
            worst = worst.max(d.unwrap());
        }
    }
    // P(o | z=0) = (0.48, 0.12) / 0.6 = (0.8, 0.2) for both endpoints:
    // 0.64*0.9 + 0.16*0.3 + 0.16*0.6 + 0.04*0.2 = 0.728.
    let hand = factorization_check(&w.cond, &[0.8, 0.2], &[0.8, 0.2], &[0.728, 0.272]).unwrap();
    worst.max(hand)
}

/// Mixture entropy as both posteriors move from uniform to one-hot on
/// class 0 in `steps` equal increments.
pub fn sharpening_entropies(steps: usize) -> Vec<f64> {
    let t = table();
    (0..=steps)
        .map(|s| {
            let a = 0.5 + 0.5 * s as f64 / steps as f64;
            let post = [a, 1.0 - a];
            entropy(&marginalize(&t, &post, &post).unwrap())
        })
        .collect()
}
