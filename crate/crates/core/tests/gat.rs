mod common;

use std::collections::BTreeSet;

use common::*;
use kgalign::gat::{attention_weights, gat_forward, gat_layer, init_gat, GatConfig, GraphInputs};
use kgalign::kg::{EntityId, KnowledgeGraph};
use kgalign::numerics::{grad_check_params, gradcheck::worst, seeded, ParamStore, Session, Tensor};
use kgalign::select::{build_subgraph, Subgraph};
use proptest::prelude::*;
use rand::Rng;

const DIM: usize = 6;

fn cfg(layers: usize) -> GatConfig {
    GatConfig {
        layers,
        dim: DIM,
        qk_dim: 4,
        hidden: 5,
    }
}

fn setup(seed: u64, nodes: usize, edges: usize) -> (KnowledgeGraph, Subgraph, ParamStore, Tensor) {
    let mut rng = seeded(seed);
    let g = random_graph(&mut rng, nodes, edges, 3, 10);
    let extracted: BTreeSet<EntityId> = (0..nodes).filter(|i| i % 3 == 0).map(EntityId).collect();
    let kept: Vec<EntityId> = (0..nodes).filter(|i| i % 3 == 1).map(EntityId).collect();
    let sub = build_subgraph(&g, &extracted, &kept).unwrap();
    let mut params = ParamStore::new();
    params.init_table("kg.rel", g.total_relations(), DIM, &mut rng);
    init_gat(&mut params, &cfg(2), &mut rng);
    let states = Tensor::uniform(sub.len() - 1, DIM, 1.0, &mut rng);
    (g, sub, params, states)
}

fn run(params: &ParamStore, sub: &Subgraph, states: &Tensor, g: &KnowledgeGraph, layers: usize) -> (Tensor, Tensor, Vec<Tensor>) {
    let mut s = Session::new(params);
    let e = s.constant(states.clone());
    let out = gat_forward(&mut s, &cfg(layers), sub, e, g.self_relation());
    (s.value(out.states).clone(), s.value(out.readout).clone(), out.attention)
}

#[test]
fn forward_matches_dense_oracle() {
    for seed in 0..10 {
        let (g, sub, params, states) = setup(seed, 9, 20);
        let (got, readout, attention) = run(&params, &sub, &states, &g, 2);
        let oracle = gat_oracle(&params, &sub, &mat(&states), g.self_relation().0, 2);
        assert!(max_abs_diff(&mat(&got), &oracle.states) < 1e-12);
        assert!(max_abs_diff(&mat(&readout), &vec![oracle.states[sub.interaction_index].clone()]) < 1e-12);

        let mut s = Session::new(&params);
        let e = s.constant(states.clone());
        let inputs = GraphInputs::new(&mut s, &sub, g.self_relation());
        let h = kgalign::gat::initial_states(&mut s, &sub, e);
        let (_, alpha0) = gat_layer(&mut s, &cfg(2), 0, &inputs, h);
        assert_eq!(alpha0.data(), attention[0].data());
        for (l, layer) in oracle.attention.iter().enumerate() {
            for (j, want) in layer.iter().enumerate() {
                let got: Vec<(usize, usize, f64)> = inputs
                    .edges
                    .iter()
                    .zip(attention[l].data())
                    .filter(|(e, _)| e.dst == j)
                    .map(|(e, &a)| (e.src, e.relation.0, a))
                    .collect();
                let mut got_sorted = got.clone();
                let mut want_sorted = want.clone();
                got_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                want_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                assert_eq!(got_sorted.len(), want_sorted.len());
                for (a, b) in got_sorted.iter().zip(&want_sorted) {
                    assert_eq!((a.0, a.1), (b.0, b.1));
                    assert!((a.2 - b.2).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn isolated_node_attends_only_to_itself() {
    let mut rng = seeded(4);
    let g = random_graph(&mut rng, 5, 0, 2, 10);
    let extracted: BTreeSet<EntityId> = [EntityId(0)].into();
    let sub = build_subgraph(&g, &extracted, &[EntityId(3)]).unwrap();
    let mut params = ParamStore::new();
    params.init_table("kg.rel", g.total_relations(), DIM, &mut rng);
    init_gat(&mut params, &cfg(1), &mut rng);
    let mut s = Session::new(&params);
    let states = s.constant(Tensor::uniform(2, DIM, 1.0, &mut rng));
    let h = kgalign::gat::initial_states(&mut s, &sub, states);
    let w = attention_weights(&mut s, &cfg(1), 0, &sub, h, 1, g.self_relation());
    assert_eq!(w, vec![(1, g.self_relation(), 1.0)]);
}

#[test]
fn zeroed_update_is_identity() {
    let (g, sub, mut params, states) = setup(3, 10, 25);
    for l in 0..2 {
        for part in ["w", "b"] {
            let name = format!("gat.{l}.n.{part}");
            let shape = params.get(&name).unwrap().shape();
            params.insert(name, Tensor::zeros(shape[0], shape[1]));
        }
    }
    let mut s = Session::new(&params);
    let e = s.constant(states.clone());
    let inputs = GraphInputs::new(&mut s, &sub, g.self_relation());
    let h = kgalign::gat::initial_states(&mut s, &sub, e);
    let before = s.value(h).clone();
    let (out, _) = gat_layer(&mut s, &cfg(2), 0, &inputs, h);
    assert!(s.value(out).bit_eq(&before));
}

#[test]
fn gradients_pass_check() {
    let (g, sub, params, states) = setup(5, 6, 10);
    let f = |s: &mut Session| {
        let e = s.constant(states.clone());
        let out = gat_forward(s, &cfg(2), &sub, e, g.self_relation());
        let sq = s.mul(out.states, out.states);
        s.sum(sq)
    };
    let report = grad_check_params(f, &params, 1e-5).unwrap();
    assert!(report.iter().any(|c| c.name == "kg.rel"));
    assert!(worst(&report) < 1e-4, "{report:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn attention_normalizes_and_readout_is_permutation_invariant(seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let nodes = rng.random_range(3..14);
        let edges = rng.random_range(0..40);
        let (g, sub, params, states) = setup(seed, nodes, edges);
        let (_, readout, attention) = run(&params, &sub, &states, &g, 2);
        let mut s = Session::new(&params);
        let inputs = GraphInputs::new(&mut s, &sub, g.self_relation());
        for alpha in &attention {
            let mut sums = vec![0.0; sub.len()];
            for (e, a) in inputs.edges.iter().zip(alpha.data()) {
                sums[e.dst] += a;
            }
            for total in sums {
                prop_assert!((total - 1.0).abs() < 1e-9);
            }
        }

        let mut order: Vec<usize> = (0..sub.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let permuted = sub.permuted(&order);
        let ids = sub.entity_ids();
        let rows: Vec<usize> = permuted
            .entity_ids()
            .iter()
            .map(|e| ids.iter().position(|x| x == e).unwrap())
            .collect();
        let (_, readout2, _) = run(&params, &permuted, &states.gather_rows(&rows), &g, 2);
        prop_assert!(readout.max_abs_diff(&readout2) < 1e-9);
    }
}
