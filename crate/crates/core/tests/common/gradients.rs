//! Seeded finite-difference cases covering every training loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use ssg_core::contrastive::{
    ce_like_loss, coupled_text_loss, cross_modal_loss, pretrain_loss, synthetic_modal_provider, text_contrastive_loss,
    visual_contrastive_loss, ContrastiveBatch, PretrainWeights,
};
use ssg_core::encoder::{reg_loss, EncoderConfig, ObjectEncoder};
use ssg_core::gnn::{GnnConfig, GnnFlags};
use ssg_core::gradcheck::finite_diff_check;
use ssg_core::model::{prepare_scene, sg_loss, LossWeights, ModelConfig, SceneGraphModel, SceneInput};
use ssg_core::relation::RelationConfig;
use ssg_core::scene::{Edge, Instance, Point, Scene, Split};
use ssg_core::{ParameterStore, Tape, Tensor};

pub const EPSILON: f64 = 1e-5;

/// Cases are redrawn until every ReLU/abs input and pooled-max gap is at
/// least this far from a kink, so central differences never straddle one.
pub const KINK_MARGIN: f64 = 2e-4;

/// A softer temperature than the training default keeps every anchor
/// gradient well above the round-off floor of a 1e-5 central difference.
pub const GRAD_TAU: f64 = 0.5;

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| std * { let x: f64 = StandardNormal.sample(rng); x })
        .collect::<Vec<f64>>();
    Tensor::matrix(rows, cols, data)
}

/// Anchors for a batch of `b` objects over `n_obj` classes with every class
/// appearing at least once when `b >= n_obj`.
fn batch(rng: &mut ChaCha8Rng, b: usize, n_obj: usize, d: usize, seed: u64) -> (ParameterStore, ContrastiveBatch) {
    let labels: Vec<usize> = (0..b).map(|i| if i < n_obj { i } else { rng.random_range(0..n_obj) }).collect();
    let feats = synthetic_modal_provider(n_obj, d, seed, 0.3, &labels).expect("valid provider");
    let mut store = ParameterStore::new();
    store.insert("z", gaussian(rng, b, d, 1.0)).unwrap();
    (store, ContrastiveBatch::new(labels, &feats, GRAD_TAU).unwrap())
}

/// Gradient check of one anchor-level loss; anchors are unit-normalized
/// on the tape, as the encoder does.
fn anchor_loss_error(
    store: &mut ParameterStore,
    f: impl Fn(&mut Tape, ssg_core::Var) -> ssg_core::Var,
) -> f64 {
    finite_diff_check(store, EPSILON, |t, s| {
        let z = t.param(s, "z");
        let u = t.normalize_rows(z);
        f(t, u)
    })
}

pub fn small_model_config() -> ModelConfig {
    ModelConfig {
        n_obj: 4,
        n_pred: 3,
        encoder: EncoderConfig {
            embed_dim: 8,
            tnet_point_hidden: vec![8],
            tnet_head_hidden: vec![8],
            point_hidden: vec![8, 16],
            n_points: 16,
        },
        relation: RelationConfig {
            obj_proj_dim: 4,
            geo_proj_dim: 4,
            edge_dim: 8,
            lse_hidden: 4,
        },
        gnn: GnnConfig {
            heads: 2,
            iterations: 2,
            bias_hidden: 4,
            node_hidden: 8,
            edge_hidden: 8,
        },
    }
}

/// A random scene of `n` box-like clouds with random labels and predicates.
pub fn random_scene(rng: &mut ChaCha8Rng, id: &str, n: usize, n_obj: usize, n_pred: usize, points: usize) -> Scene {
    let instances = (0..n)
        .map(|i| {
            let c: [f64; 3] = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.0..1.5)];
            let ext: [f64; 3] = [rng.random_range(0.2..1.0), rng.random_range(0.2..1.0), rng.random_range(0.2..1.0)];
            let pts: Vec<Point> = (0..points)
                .map(|_| core::array::from_fn(|a| c[a] + ext[a] * rng.random_range(-0.5..0.5)))
                .collect();
            Instance {
                id: i as u32,
                label: rng.random_range(0..n_obj),
                points: pts,
            }
        })
        .collect();
    let mut edges = Vec::new();
    for i in 0..n as u32 {
        for j in 0..n as u32 {
            if i != j && rng.random_bool(0.7) {
                let preds: Vec<usize> = (0..n_pred).filter(|_| rng.random_bool(0.5)).collect();
                edges.push(Edge { sub: i, obj: j, preds });
            }
        }
    }
    Scene {
        id: id.into(),
        instances,
        edges,
        split: Split::Train,
    }
}

pub fn perturb(store: &mut ParameterStore, rng: &mut ChaCha8Rng) {
    for name in store.names() {
        let v = store.value(&name).clone();
        let noise = gaussian(rng, v.rows(), v.cols(), 0.1);
        store.set_value(&name, v.zip_map(&noise, |a, b| a + b)).unwrap();
    }
}

/// Drops the last candidate pair, leaving one edge without its reverse.
fn drop_last_pair(input: &mut SceneInput) {
    let e = input.pairs.len() - 1;
    input.pairs.truncate(e);
    let keep = |t: &Tensor| Tensor::matrix(e, t.cols(), t.data()[..e * t.cols()].to_vec());
    input.descriptors = keep(&input.descriptors);
    input.targets = keep(&input.targets);
}

/// Smallest nonzero gradient magnitude a 1e-5 central difference resolves
/// to 1e-4 relative error: round-off in an order-one loss is about 2e-11
/// and the truncation term reaches 1e-10 on curved entries.
pub const MIN_RESOLVED_GRAD: f64 = 1e-5;

/// True when every entry is either exactly zero or resolvable.
fn well_conditioned(tape: &Tape, loss: ssg_core::Var, store: &mut ParameterStore) -> bool {
    let grads = tape.backward(loss);
    store.zero_grad();
    store.accumulate_grads(tape, &grads);
    let ok = store
        .iter()
        .flat_map(|(_, p)| p.grad.data().iter())
        .all(|&g| g == 0.0 || g.abs() >= MIN_RESOLVED_GRAD);
    store.zero_grad();
    ok
}

/// Model, parameters (all perturbed away from their structured init) and
/// input for the three-node end-to-end check. Five of the six ordered
/// pairs are candidates, so an odd number of residuals enters the L1 term.
/// Cases are redrawn until the pass is [`KINK_MARGIN`] away from any kink
/// and every gradient entry is zero or at least [`MIN_RESOLVED_GRAD`].
pub fn three_node_setup(seed: u64, flags: GnnFlags) -> (SceneGraphModel, ParameterStore, SceneInput) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = small_model_config();
    let model = SceneGraphModel::new(cfg.clone(), flags);
    loop {
        let mut store = ParameterStore::new();
        model.init(&mut store, &mut rng).unwrap();
        perturb(&mut store, &mut rng);
        let scene = random_scene(&mut rng, &format!("grad-{seed}"), 3, cfg.n_obj, cfg.n_pred, 24);
        let mut input = prepare_scene(&scene, cfg.encoder.n_points, cfg.n_pred).unwrap();
        drop_last_pair(&mut input);
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &store, &input);
        let loss = sg_loss(&mut tape, &out, &input, LossWeights::default()).total;
        if tape.kink_margin() >= KINK_MARGIN && well_conditioned(&tape, loss, &mut store) {
            return (model, store, input);
        }
    }
}

/// Max relative error per loss for one seed.
pub fn gradient_case(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = rng.random_range(4..=8);
    let mut out = Vec::new();

    let (mut s, cb) = batch(&mut rng, b, 3, 8, seed);
    out.push(("visual", anchor_loss_error(&mut s, |t, z| visual_contrastive_loss(t, z, &cb))));
    out.push(("text", anchor_loss_error(&mut s, |t, z| text_contrastive_loss(t, z, &cb))));
    out.push(("cross", anchor_loss_error(&mut s, |t, z| cross_modal_loss(t, z, &cb))));
    out.push(("coupled", anchor_loss_error(&mut s, |t, z| coupled_text_loss(t, z, &cb))));
    let protos = cb.text.clone();
    let labels = cb.labels.clone();
    out.push(("ce_like", anchor_loss_error(&mut s, |t, z| ce_like_loss(t, z, &labels, &protos, GRAD_TAU))));

    s.insert("a", gaussian(&mut rng, 3, 3, 0.6)).unwrap();
    out.push((
        "pretrain",
        finite_diff_check(&mut s, EPSILON, |t, st| {
            let z = t.param(st, "z");
            let u = t.normalize_rows(z);
            let a = t.param(st, "a");
            pretrain_loss(t, u, &[a], &cb, PretrainWeights::default())
        }),
    ));
    out.push((
        "reg",
        finite_diff_check(&mut s, EPSILON, |t, st| {
            let a = t.param(st, "a");
            reg_loss(t, a)
        }),
    ));

    // Regularizer through the alignment network of a real encoder.
    let enc = ObjectEncoder::new(small_model_config().encoder, "");
    let (mut es, cloud) = loop {
        let mut es = ParameterStore::new();
        enc.init(&mut es, &mut rng).unwrap();
        perturb(&mut es, &mut rng);
        let cloud = gaussian(&mut rng, 16, 3, 0.5);
        let mut tape = Tape::new();
        let p = tape.constant(cloud.clone());
        enc.tnet(&mut tape, &es, p);
        if tape.kink_margin() >= KINK_MARGIN {
            break (es, cloud);
        }
    };
    out.push((
        "reg_tnet",
        finite_diff_check(&mut es, EPSILON, |t, st| {
            let p = t.constant(cloud.clone());
            let a = enc.tnet(t, st, p);
            reg_loss(t, a)
        }),
    ));

    let (model, mut store, input) = three_node_setup(seed, GnnFlags::default());
    out.push((
        "sg",
        finite_diff_check(&mut store, EPSILON, |t, st| {
            let o = model.forward(t, st, &input);
            sg_loss(t, &o, &input, LossWeights::default()).total
        }),
    ));
    out
}
