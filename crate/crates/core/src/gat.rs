//! Typed graph attention over a per-sample [`Subgraph`].
//!
//! For a node `j` with in-neighbors `N_j` (plus itself over the reserved SELF
//! relation), one layer computes
//!
//! ```text
//! q_j   = f_q([e_j ; u_j])
//! k_s   = f_k([e_s ; u_s ; r_sj])
//! a_sj  = softmax_{s in N_j + j}(q_j . k_s / sqrt(D))
//! m_sj  = f_m([e_s ; u_s ; r_sj])          two-layer MLP with ReLU
//! e_j'  = f_n(sum_s a_sj m_sj) + e_j
//! ```
//!
//! where `u` is the node-type embedding and `r` the relation embedding. The
//! subgraph readout is the final state of the interaction node.

use rand::Rng;

use crate::encoder::RELATIONS;
use crate::error::{Error, Result};
use crate::kg::RelationId;
use crate::numerics::{ParamStore, Session, Tensor, Var};
use crate::select::{Edge, NodeKind, Subgraph};

const TYPES: &str = "gat.type";
const INTERACTION_INIT: &str = "gat.int";

#[derive(Clone, Debug, PartialEq)]
pub struct GatConfig {
    pub layers: usize,
    pub dim: usize,
    pub qk_dim: usize,
    pub hidden: usize,
}

impl GatConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.qk_dim == 0 || self.dim == 0 || self.hidden == 0 {
            return Err(Error::Config("gat layers, dim, qk_dim and hidden must be >= 1".into()));
        }
        Ok(())
    }
}

pub fn init_gat<R: Rng + ?Sized>(params: &mut ParamStore, cfg: &GatConfig, rng: &mut R) {
    let d = cfg.dim;
    params.init_table(TYPES, NodeKind::ALL.len(), d, rng);
    params.init_table(INTERACTION_INIT, 1, d, rng);
    for l in 0..cfg.layers {
        params.init_linear(&format!("gat.{l}.q"), 2 * d, cfg.qk_dim, rng);
        params.init_linear(&format!("gat.{l}.k"), 3 * d, cfg.qk_dim, rng);
        params.init_linear(&format!("gat.{l}.m1"), 3 * d, cfg.hidden, rng);
        params.init_linear(&format!("gat.{l}.m2"), cfg.hidden, d, rng);
        params.init_linear(&format!("gat.{l}.n"), d, d, rng);
    }
}

/// Subgraph edges followed by one SELF edge per node; this is the set every
/// layer attends over.
pub fn attention_edges(subgraph: &Subgraph, self_relation: RelationId) -> Vec<Edge> {
    let mut edges = subgraph.edges.clone();
    edges.extend((0..subgraph.len()).map(|j| Edge {
        src: j,
        relation: self_relation,
        dst: j,
    }));
    edges
}

/// Shared inputs of every layer: node types, edge list and per-edge
/// relation embeddings.
pub struct GraphInputs {
    pub edges: Vec<Edge>,
    pub types: Var,
    pub relations: Var,
    pub node_count: usize,
}

impl GraphInputs {
    pub fn new(s: &mut Session, subgraph: &Subgraph, self_relation: RelationId) -> Self {
        let edges = attention_edges(subgraph, self_relation);
        let type_table = s.param(TYPES);
        let kinds: Vec<usize> = subgraph.nodes.iter().map(|n| n.kind.index()).collect();
        let types = s.gather(type_table, &kinds);
        let rel_table = s.param(RELATIONS);
        let rel_idx: Vec<usize> = edges.iter().map(|e| e.relation.0).collect();
        let relations = s.gather(rel_table, &rel_idx);
        Self {
            edges,
            types,
            relations,
            node_count: subgraph.len(),
        }
    }
}

/// One layer; returns the new states and the attention weight of every edge
/// in `inputs.edges` order.
pub fn gat_layer(s: &mut Session, cfg: &GatConfig, layer: usize, inputs: &GraphInputs, states: Var) -> (Var, Tensor) {
    let src: Vec<usize> = inputs.edges.iter().map(|e| e.src).collect();
    let dst: Vec<usize> = inputs.edges.iter().map(|e| e.dst).collect();

    let node_in = s.concat_cols(&[states, inputs.types]);
    let queries = s.linear(node_in, &format!("gat.{layer}.q"));

    let src_states = s.gather(states, &src);
    let src_types = s.gather(inputs.types, &src);
    let edge_in = s.concat_cols(&[src_states, src_types, inputs.relations]);
    let keys = s.linear(edge_in, &format!("gat.{layer}.k"));

    let q_dst = s.gather(queries, &dst);
    let qk = s.mul(q_dst, keys);
    let dots = s.row_sum(qk);
    let scores = s.scale(dots, 1.0 / (cfg.qk_dim as f64).sqrt());
    let alpha = s.segment_softmax(scores, &dst);

    let hidden = s.linear(edge_in, &format!("gat.{layer}.m1"));
    let hidden = s.relu(hidden);
    let messages = s.linear(hidden, &format!("gat.{layer}.m2"));

    let weighted = s.mul_col(messages, alpha);
    let aggregated = s.scatter_add(weighted, &dst, inputs.node_count);
    let update = s.linear(aggregated, &format!("gat.{layer}.n"));
    let out = s.add(update, states);
    let weights = s.value(alpha).clone();
    (out, weights)
}

pub struct GatOutput {
    /// Final state of every node, in subgraph node order.
    pub states: Var,
    /// Final state of the interaction node.
    pub readout: Var,
    /// Edges attended over (subgraph edges then SELF edges).
    pub edges: Vec<Edge>,
    /// Per layer, the attention weight of each edge.
    pub attention: Vec<Tensor>,
}

/// Initial node states: entity rows in node order from `entity_states`
/// (aligned with [`Subgraph::entity_ids`]) and the trainable vector for the
/// interaction node.
pub fn initial_states(s: &mut Session, subgraph: &Subgraph, entity_states: Var) -> Var {
    let n_entities = s.value(entity_states).rows();
    assert_eq!(n_entities + 1, subgraph.len(), "one state per entity node");
    let init = s.param(INTERACTION_INIT);
    let stacked = s.concat_rows(&[entity_states, init]);
    let mut next_entity = 0;
    let order: Vec<usize> = subgraph
        .nodes
        .iter()
        .map(|n| {
            if n.kind == NodeKind::Interaction {
                n_entities
            } else {
                next_entity += 1;
                next_entity - 1
            }
        })
        .collect();
    s.gather(stacked, &order)
}

pub fn gat_forward(
    s: &mut Session,
    cfg: &GatConfig,
    subgraph: &Subgraph,
    entity_states: Var,
    self_relation: RelationId,
) -> GatOutput {
    let inputs = GraphInputs::new(s, subgraph, self_relation);
    let mut states = initial_states(s, subgraph, entity_states);
    let mut attention = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let (next, alpha) = gat_layer(s, cfg, l, &inputs, states);
        states = next;
        attention.push(alpha);
    }
    let readout = s.gather(states, &[subgraph.interaction_index]);
    GatOutput {
        states,
        readout,
        edges: inputs.edges,
        attention,
    }
}

/// Attention of node `j` at `layer` over its in-neighbors and itself:
/// `(source node, relation, weight)` per attended edge.
pub fn attention_weights(
    s: &mut Session,
    cfg: &GatConfig,
    layer: usize,
    subgraph: &Subgraph,
    states: Var,
    j: usize,
    self_relation: RelationId,
) -> Vec<(usize, RelationId, f64)> {
    let inputs = GraphInputs::new(s, subgraph, self_relation);
    let (_, alpha) = gat_layer(s, cfg, layer, &inputs, states);
    inputs
        .edges
        .iter()
        .zip(alpha.data())
        .filter(|(e, _)| e.dst == j)
        .map(|(e, &a)| (e.src, e.relation, a))
        .collect()
}
