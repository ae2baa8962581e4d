//! Exact equivalences between ablation switches and parameter settings.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ssg_core::eval::SceneDump;
use ssg_core::gnn::GnnFlags;
use ssg_core::model::{prepare_scene, SceneGraphModel, SceneInput};
use ssg_core::ParameterStore;

use super::gradients::{perturb, random_scene, small_model_config};

/// Gate logit whose sigmoid rounds to exactly 1.
pub const SATURATED_LOGIT: f64 = 1000.0;

fn bits(d: &SceneDump) -> Vec<u64> {
    d.obj_probs.data().iter().chain(&d.pred_scores).map(|x| x.to_bits()).collect()
}

fn setup(seed: u64) -> (SceneGraphModel, ParameterStore, SceneInput) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = small_model_config();
    let full = SceneGraphModel::new(cfg.clone(), GnnFlags::default());
    let mut store = ParameterStore::new();
    full.init(&mut store, &mut rng).unwrap();
    perturb(&mut store, &mut rng);
    let scene = random_scene(&mut rng, &format!("switch-{seed}"), 5, cfg.n_obj, cfg.n_pred, 24);
    let input = prepare_scene(&scene, cfg.encoder.n_points, cfg.n_pred).unwrap();
    (full, store, input)
}

fn variant(full: &SceneGraphModel, flags: GnnFlags) -> SceneGraphModel {
    SceneGraphModel::new(full.cfg.clone(), flags)
}

/// `(distance bias zeroed == no distance bias, gate saturated == no gate)`,
/// each compared bit for bit on a random five-node scene.
pub fn switch_identities(seed: u64) -> (bool, bool) {
    let (full, store, input) = setup(seed);

    let mut zeroed = store.clone();
    full.gnn.zero_distance_bias(&mut zeroed).unwrap();
    let plain = variant(&full, GnnFlags { gse: false, ..GnnFlags::default() });
    let gse_same = bits(&full.predict(&zeroed, &input)) == bits(&plain.predict(&zeroed, &input));

    let mut saturated = store.clone();
    full.gnn.force_gate(&mut saturated, SATURATED_LOGIT).unwrap();
    let ungated = variant(&full, GnnFlags { gating: false, ..GnnFlags::default() });
    let gate_same = bits(&full.predict(&saturated, &input)) == bits(&ungated.predict(&saturated, &input));

    (gse_same, gate_same)
}

/// The same comparisons with the parameters left as drawn; both should
/// report a difference.
pub fn untouched_parameters_differ(seed: u64) -> (bool, bool) {
    let (full, store, input) = setup(seed);
    let reference = bits(&full.predict(&store, &input));
    let plain = variant(&full, GnnFlags { gse: false, ..GnnFlags::default() });
    let ungated = variant(&full, GnnFlags { gating: false, ..GnnFlags::default() });
    (
        bits(&plain.predict(&store, &input)) != reference,
        bits(&ungated.predict(&store, &input)) != reference,
    )
}
