//! Message passing over a scene graph: distance-biased multi-head
//! attention between nodes, then direction-aware aggregation of edge
//! features into nodes and gated bidirectional edge updates.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::nn::{LayerNorm, Linear, Mlp};
use crate::params::ParameterStore;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GnnFlags {
    /// Distance bias in the node attention.
    pub gse: bool,
    /// Separate subject/object aggregation.
    pub beg: bool,
    /// Learned gate on the reverse edge; `false` fixes it at 1.
    pub gating: bool,
}

impl Default for GnnFlags {
    fn default() -> Self {
        Self {
            gse: true,
            beg: true,
            gating: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GnnConfig {
    pub heads: usize,
    pub iterations: usize,
    pub bias_hidden: usize,
    pub node_hidden: usize,
    pub edge_hidden: usize,
}

impl Default for GnnConfig {
    fn default() -> Self {
        Self {
            heads: 8,
            iterations: 2,
            bias_hidden: 8,
            node_hidden: 128,
            edge_hidden: 128,
        }
    }
}

/// Node features, candidate-edge features and the centroid distance
/// matrix of one scene, all living on a tape.
#[derive(Clone, Debug)]
pub struct SceneGraphState {
    pub nodes: Var,
    pub edges: Var,
    pub pairs: Vec<(usize, usize)>,
    pub dist: Tensor,
}

impl SceneGraphState {
    pub fn num_nodes(&self) -> usize {
        self.dist.rows()
    }

    /// For each edge, the row of its reverse pair if that pair is a
    /// candidate.
    pub fn reverse_index(&self) -> Vec<Option<usize>> {
        let lookup: alloc::collections::BTreeMap<(usize, usize), usize> =
            self.pairs.iter().enumerate().map(|(e, &p)| (p, e)).collect();
        self.pairs.iter().map(|&(i, j)| lookup.get(&(j, i)).copied()).collect()
    }
}

/// All ordered pairs `(i, j)`, `i != j`, in row-major order.
pub fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).collect()
}

/// Mean-aggregation matrices `(out, in)`, each `N x E`: row `i` averages
/// the edges leaving (resp. entering) node `i`. Empty rows stay zero.
pub fn aggregation_matrices(n: usize, pairs: &[(usize, usize)]) -> (Tensor, Tensor) {
    let e = pairs.len();
    let mut out = Tensor::zeros(n, e);
    let mut inc = Tensor::zeros(n, e);
    let mut n_out = vec![0usize; n];
    let mut n_in = vec![0usize; n];
    for &(i, j) in pairs {
        n_out[i] += 1;
        n_in[j] += 1;
    }
    for (k, &(i, j)) in pairs.iter().enumerate() {
        out.set(i, k, 1.0 / n_out[i] as f64);
        inc.set(j, k, 1.0 / n_in[j] as f64);
    }
    (out, inc)
}

/// Mean over every edge touching node `i` in either direction.
fn incident_matrix(n: usize, pairs: &[(usize, usize)]) -> Tensor {
    let mut deg = vec![0usize; n];
    for &(i, j) in pairs {
        deg[i] += 1;
        deg[j] += 1;
    }
    let mut m = Tensor::zeros(n, pairs.len());
    for (k, &(i, j)) in pairs.iter().enumerate() {
        m.set(i, k, m.get(i, k) + 1.0 / deg[i] as f64);
        m.set(j, k, m.get(j, k) + 1.0 / deg[j] as f64);
    }
    m
}

#[derive(Clone, Debug, PartialEq)]
struct Head {
    q: Linear,
    k: Linear,
    v: Linear,
    bias: Mlp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gnn {
    pub cfg: GnnConfig,
    pub flags: GnnFlags,
    node_dim: usize,
    edge_dim: usize,
    heads: Vec<Head>,
    attn_out: Linear,
    w_dir: Linear,
    node_mlp: Mlp,
    node_ln: LayerNorm,
    edge_mlp: Mlp,
    gate: Linear,
}

impl Gnn {
    pub fn new(cfg: GnnConfig, flags: GnnFlags, node_dim: usize, edge_dim: usize) -> Self {
        let dk = if cfg.heads == 0 { 0 } else { node_dim / cfg.heads };
        let heads = (0..cfg.heads)
            .map(|h| Head {
                q: Linear::new(format!("gnn.gse.h{h}.q"), node_dim, dk),
                // A key or bias term shared by a whole row cancels in the softmax.
                k: Linear::without_bias(format!("gnn.gse.h{h}.k"), node_dim, dk),
                v: Linear::new(format!("gnn.gse.h{h}.v"), node_dim, dk),
                bias: Mlp::new(&format!("gnn.gse.h{h}.bias"), &[1, cfg.bias_hidden, 1]).without_output_bias(),
            })
            .collect();
        Self {
            heads,
            attn_out: Linear::new("gnn.gse.out", node_dim, node_dim),
            w_dir: Linear::new("gnn.beg.w_dir", 2 * edge_dim, node_dim),
            node_mlp: Mlp::new("gnn.beg.node", &[2 * node_dim, cfg.node_hidden, node_dim]),
            node_ln: LayerNorm::new("gnn.beg.ln", node_dim),
            edge_mlp: Mlp::new("gnn.beg.edge", &[2 * node_dim + 2 * edge_dim, cfg.edge_hidden, edge_dim]),
            gate: Linear::new("gnn.beg.gate", edge_dim, 1),
            node_dim,
            edge_dim,
            cfg,
            flags,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.cfg;
        if c.heads == 0 || self.node_dim % c.heads != 0 {
            return Err(Error::Config(format!("{} heads do not divide node dim {}", c.heads, self.node_dim)));
        }
        if c.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        Ok(())
    }

    pub fn init<R: Rng>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        self.validate()?;
        for h in &self.heads {
            h.q.init(store, rng)?;
            h.k.init(store, rng)?;
            h.v.init(store, rng)?;
            h.bias.init(store, rng)?;
        }
        self.attn_out.init(store, rng)?;
        self.w_dir.init(store, rng)?;
        self.node_mlp.init(store, rng)?;
        self.node_ln.init(store)?;
        self.edge_mlp.init(store, rng)?;
        self.gate.init(store, rng)
    }

    /// Zeroes the last layer of every distance-bias MLP.
    pub fn zero_distance_bias(&self, store: &mut ParameterStore) -> Result<()> {
        self.heads.iter().try_for_each(|h| h.bias.last().zero(store))
    }

    /// Sets the gate to a constant logit.
    pub fn force_gate(&self, store: &mut ParameterStore, logit: f64) -> Result<()> {
        self.gate.zero(store)?;
        store.set_value(&self.gate.bias_name(), Tensor::scalar(logit).reshaped(vec![1, 1])?)
    }

    /// Attention block with residual. Returns the new node features and
    /// each head's `N x N` attention matrix.
    pub fn gse_attention(&self, tape: &mut Tape, store: &ParameterStore, nodes: Var, dist: &Tensor) -> (Var, Vec<Var>) {
        let n = dist.rows();
        let dk = (self.node_dim / self.cfg.heads) as f64;
        let d_col = Tensor::matrix(n * n, 1, dist.data().to_vec());
        let mut outs = Vec::with_capacity(self.heads.len());
        let mut attns = Vec::with_capacity(self.heads.len());
        for h in &self.heads {
            let q = h.q.forward(tape, store, nodes);
            let k = h.k.forward(tape, store, nodes);
            let v = h.v.forward(tape, store, nodes);
            let kt = tape.transpose(k);
            let qk = tape.matmul(q, kt);
            let mut logits = tape.scale(qk, 1.0 / math::sqrt(dk));
            if self.flags.gse {
                let dv = tape.constant(d_col.clone());
                let w = h.bias.forward(tape, store, dv);
                let w = tape.reshape(w, n, n);
                logits = tape.add(logits, w);
            }
            let a = tape.softmax_rows(logits);
            outs.push(tape.matmul(a, v));
            attns.push(a);
        }
        let cat = tape.concat_cols(&outs);
        let proj = self.attn_out.forward(tape, store, cat);
        (tape.add(nodes, proj), attns)
    }

    /// Per-node `(z_sub, z_obj)`, each `N x d_e`. Without `beg` both slots
    /// hold the mean over all incident edges.
    pub fn beg_aggregate(&self, tape: &mut Tape, state: &SceneGraphState) -> (Var, Var) {
        let n = state.num_nodes();
        if self.flags.beg {
            let (out, inc) = aggregation_matrices(n, &state.pairs);
            let out = tape.constant(out);
            let inc = tape.constant(inc);
            (tape.matmul(out, state.edges), tape.matmul(inc, state.edges))
        } else {
            let m = tape.constant(incident_matrix(n, &state.pairs));
            let z = tape.matmul(m, state.edges);
            (z, z)
        }
    }

    /// `LN(MLP(concat(z, ReLU(W_dir concat(z_sub, z_obj)))))`, row-wise.
    pub fn beg_update_node(&self, tape: &mut Tape, store: &ParameterStore, nodes: Var, z_sub: Var, z_obj: Var) -> Var {
        let dir = tape.concat_cols(&[z_sub, z_obj]);
        let dir = self.w_dir.forward(tape, store, dir);
        let dir = tape.relu(dir);
        let cat = tape.concat_cols(&[nodes, dir]);
        let h = self.node_mlp.forward(tape, store, cat);
        self.node_ln.forward(tape, store, h)
    }

    /// Per-edge gate `beta`, `E x 1`.
    pub fn gate(&self, tape: &mut Tape, store: &ParameterStore, edges: Var) -> Var {
        let g = self.gate.forward(tape, store, edges);
        tape.sigmoid(g)
    }

    /// `MLP(concat(z_i, z_ij, beta_ij * z_ji, z_j))` for row-aligned inputs.
    /// With gating off (or without `beg`) the reverse edge enters unscaled.
    pub fn beg_update_edge(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        z_i: Var,
        z_ij: Var,
        z_ji: Var,
        z_j: Var,
    ) -> Var {
        let rev = if self.flags.gating && self.flags.beg {
            let beta = self.gate(tape, store, z_ij);
            tape.mul_col(z_ji, beta)
        } else {
            z_ji
        };
        let cat = tape.concat_cols(&[z_i, z_ij, rev, z_j]);
        self.edge_mlp.forward(tape, store, cat)
    }

    /// One round: attention, aggregation, node update, then edge update
    /// from the new nodes and the old edges.
    pub fn step(&self, tape: &mut Tape, store: &ParameterStore, state: &SceneGraphState) -> SceneGraphState {
        let (nodes, _) = self.gse_attention(tape, store, state.nodes, &state.dist);
        let (z_sub, z_obj) = self.beg_aggregate(tape, state);
        let nodes = self.beg_update_node(tape, store, nodes, z_sub, z_obj);
        let sub: Vec<Option<usize>> = state.pairs.iter().map(|p| Some(p.0)).collect();
        let obj: Vec<Option<usize>> = state.pairs.iter().map(|p| Some(p.1)).collect();
        let z_i = tape.gather_rows(nodes, &sub);
        let z_j = tape.gather_rows(nodes, &obj);
        let z_ji = tape.gather_rows(state.edges, &state.reverse_index());
        let edges = self.beg_update_edge(tape, store, z_i, state.edges, z_ji, z_j);
        SceneGraphState {
            nodes,
            edges,
            pairs: state.pairs.clone(),
            dist: state.dist.clone(),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore, state: SceneGraphState) -> SceneGraphState {
        self.forward_iterations(tape, store, state, self.cfg.iterations)
    }

    pub fn forward_iterations(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        mut state: SceneGraphState,
        iterations: usize,
    ) -> SceneGraphState {
        for _ in 0..iterations {
            state = self.step(tape, store, &state);
        }
        state
    }
}
