mod common;

use common::gradients::perturb;
use common::switches::{switch_identities, untouched_parameters_differ};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use ssg_core::gnn::{all_pairs, Gnn, GnnConfig, GnnFlags, SceneGraphState};
use ssg_core::relation::{RelationConfig, RelationEncoder};
use ssg_core::scene::DESCRIPTOR_DIM;
use ssg_core::{ParameterStore, Tape, Tensor};

const NODE_DIM: usize = 8;
const EDGE_DIM: usize = 6;

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(&mut *rng)).collect();
    Tensor::matrix(rows, cols, data)
}

fn gnn(iterations: usize, flags: GnnFlags, rng: &mut ChaCha8Rng) -> (Gnn, ParameterStore) {
    let cfg = GnnConfig {
        heads: 2,
        iterations,
        bias_hidden: 4,
        node_hidden: 8,
        edge_hidden: 8,
    };
    let g = Gnn::new(cfg, flags, NODE_DIM, EDGE_DIM);
    let mut store = ParameterStore::new();
    g.init(&mut store, rng).unwrap();
    perturb(&mut store, rng);
    (g, store)
}

struct Graph {
    nodes: Tensor,
    edges: Tensor,
    pairs: Vec<(usize, usize)>,
    dist: Tensor,
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> Graph {
    let pts = gaussian(rng, n, 3);
    let mut dist = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let s: f64 = (0..3).map(|a| (pts.get(i, a) - pts.get(j, a)).powi(2)).sum();
            dist.set(i, j, s.sqrt());
        }
    }
    let pairs: Vec<(usize, usize)> = all_pairs(n).into_iter().filter(|_| rng.random_bool(0.7)).collect();
    Graph {
        nodes: gaussian(rng, n, NODE_DIM),
        edges: gaussian(rng, pairs.len(), EDGE_DIM),
        pairs,
        dist,
    }
}

fn run(g: &Gnn, store: &ParameterStore, graph: &Graph, iterations: usize) -> (Tensor, Tensor) {
    let mut tape = Tape::new();
    let state = SceneGraphState {
        nodes: tape.constant(graph.nodes.clone()),
        edges: tape.constant(graph.edges.clone()),
        pairs: graph.pairs.clone(),
        dist: graph.dist.clone(),
    };
    let out = g.forward_iterations(&mut tape, store, state, iterations);
    (tape.value(out.nodes).clone(), tape.value(out.edges).clone())
}

fn max_gap(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn relabelling_nodes_permutes_outputs(seed in any::<u64>(), n in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (g, store) = gnn(2, GnnFlags::default(), &mut rng);
        let graph = random_graph(&mut rng, n);
        // sigma maps old index to new index.
        let mut sigma: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            sigma.swap(i, rng.random_range(0..=i));
        }
        let mut nodes = Tensor::zeros(n, NODE_DIM);
        let mut dist = Tensor::zeros(n, n);
        for i in 0..n {
            for c in 0..NODE_DIM {
                nodes.set(sigma[i], c, graph.nodes.get(i, c));
            }
            for j in 0..n {
                dist.set(sigma[i], sigma[j], graph.dist.get(i, j));
            }
        }
        let moved = Graph {
            nodes,
            edges: graph.edges.clone(),
            pairs: graph.pairs.iter().map(|&(i, j)| (sigma[i], sigma[j])).collect(),
            dist,
        };
        let (n0, e0) = run(&g, &store, &graph, 2);
        let (n1, e1) = run(&g, &store, &moved, 2);
        prop_assert!(max_gap(&e0, &e1) < 1e-12);
        for i in 0..n {
            for c in 0..NODE_DIM {
                prop_assert!((n0.get(i, c) - n1.get(sigma[i], c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn closed_gate_ignores_reverse_edge(seed in any::<u64>(), e in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (g, mut store) = gnn(1, GnnFlags::default(), &mut rng);
        g.force_gate(&mut store, -1000.0).unwrap();
        let z_i = gaussian(&mut rng, e, NODE_DIM);
        let z_ij = gaussian(&mut rng, e, EDGE_DIM);
        let z_j = gaussian(&mut rng, e, NODE_DIM);
        let update = |rev: Tensor| {
            let mut tape = Tape::new();
            let vars = [z_i.clone(), z_ij.clone(), rev, z_j.clone()].map(|t| tape.constant(t));
            let out = g.beg_update_edge(&mut tape, &store, vars[0], vars[1], vars[2], vars[3]);
            tape.value(out).clone()
        };
        let a = update(gaussian(&mut rng, e, EDGE_DIM));
        let b = update(gaussian(&mut rng, e, EDGE_DIM));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn ablation_switches_match_parameter_settings(seed in any::<u64>()) {
        prop_assert_eq!(switch_identities(seed), (true, true));
        prop_assert_eq!(untouched_parameters_differ(seed), (true, true));
    }
}

#[test]
fn second_iteration_changes_the_output() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (g, store) = gnn(2, GnnFlags::default(), &mut rng);
        let graph = random_graph(&mut rng, 4);
        let (n1, e1) = run(&g, &store, &graph, 1);
        let (n2, e2) = run(&g, &store, &graph, 2);
        assert!(max_gap(&n1, &n2) > 1e-6 && max_gap(&e1, &e2) > 1e-6, "seed {seed}");
    }
}

#[test]
fn swapping_subject_and_object_changes_the_edge() {
    let cfg = RelationConfig {
        obj_proj_dim: 6,
        geo_proj_dim: 4,
        edge_dim: 8,
        lse_hidden: 4,
    };
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rel = RelationEncoder::new(cfg.clone(), NODE_DIM);
        let mut store = ParameterStore::new();
        rel.init(&mut store, &mut rng).unwrap();
        let zi = gaussian(&mut rng, 1, NODE_DIM);
        let zj = gaussian(&mut rng, 1, NODE_DIM);
        let g = gaussian(&mut rng, 1, DESCRIPTOR_DIM);
        let edge = |a: &Tensor, b: &Tensor, geo: Tensor| {
            let mut tape = Tape::new();
            let (a, b, geo) = (tape.constant(a.clone()), tape.constant(b.clone()), tape.constant(geo));
            let out = rel.init_edge_feature(&mut tape, &store, a, b, geo);
            tape.value(out).clone()
        };
        let fwd = edge(&zi, &zj, g.clone());
        let rev = edge(&zj, &zi, g.map(|x| -x));
        assert!(max_gap(&fwd, &rev) > 1e-9, "seed {seed}");
    }
}
