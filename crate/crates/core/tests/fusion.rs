mod common;

use common::*;
use kgalign::fusion::{cross_attend as attend, fuse, init_fusion, probabilities, Context, FusionConfig, IMAGE_STAGE, KG_STAGE};
use kgalign::numerics::{grad_check_params, gradcheck::worst, seeded, ParamStore, Session, Tensor};
use proptest::prelude::*;

const D: usize = 6;

fn setup(seed: u64) -> ParamStore {
    let mut p = ParamStore::new();
    let cfg = FusionConfig {
        dim: D,
        pooled_only: false,
        use_kg: true,
    };
    init_fusion(&mut p, &cfg, &mut seeded(seed));
    p
}

fn attend_values(p: &ParamStore, query: &Tensor, ctx: &Tensor) -> (Tensor, Vec<f64>) {
    let mut s = Session::new(p);
    let q = s.constant(query.clone());
    let c = s.constant(ctx.clone());
    let (out, w) = attend(&mut s, KG_STAGE, q, c).unwrap();
    (s.value(out).clone(), w)
}

#[test]
fn singleton_context_is_the_value_path() {
    let p = setup(1);
    let mut rng = seeded(2);
    let q = Tensor::uniform(1, D, 1.0, &mut rng);
    let c = Tensor::uniform(1, D, 1.0, &mut rng);
    let (out, w) = attend_values(&p, &q, &c);
    assert_eq!(w, vec![1.0]);
    let v = linear(&mat(&c), &p, "fuse.kg.v");
    let o = linear(&v, &p, "fuse.kg.o");
    let want = layer_norm(&add(&mat(&q), &o), &p, "fuse.kg.ln");
    assert!(max_abs_diff(&mat(&out), &want) < 1e-12);

    let doubled = Tensor::from_rows(&[c.row(0).to_vec(), c.row(0).to_vec()]).unwrap();
    let (out2, w2) = attend_values(&p, &q, &doubled);
    assert_eq!(w2, vec![0.5, 0.5]);
    assert!(out.max_abs_diff(&out2) < 1e-12);
}

#[test]
fn five_vector_context_matches_softmax_oracle() {
    for seed in 0..10 {
        let p = setup(seed);
        let mut rng = seeded(100 + seed);
        let q = Tensor::uniform(1, D, 2.0, &mut rng);
        let c = Tensor::uniform(5, D, 2.0, &mut rng);
        let (out, w) = attend_values(&p, &q, &c);
        let (want_out, want_w) = cross_attend(&p, "fuse.kg", q.row(0), &mat(&c));
        assert!(max_abs_diff(&vec![w.clone()], &vec![want_w]) < 1e-12);
        assert!(max_abs_diff(&mat(&out), &vec![want_out]) < 1e-12);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn classifier_arithmetic() {
    let mut p = setup(3);
    p.insert("cls.w", Tensor::zeros(D, 2));
    p.insert("cls.b", Tensor::zeros(1, 2));
    let fused = Tensor::row_vector(vec![0.7; D]);
    let run = |p: &ParamStore| {
        let mut s = Session::new(p);
        let x = s.constant(fused.clone());
        let logits = s.linear(x, "cls");
        let loss = s.cross_entropy(logits, &[1]);
        (probabilities(s.value(logits)), s.value(loss).item())
    };
    let (probs, loss) = run(&p);
    assert_eq!(probs, [0.5, 0.5]);
    assert!((loss - 2f64.ln()).abs() < 1e-15);

    p.insert("cls.b", Tensor::row_vector(vec![3f64.ln(), 0.0]));
    let (probs, _) = run(&p);
    assert!((probs[0] - 0.75).abs() < 1e-12 && (probs[1] - 0.25).abs() < 1e-12);

    p.insert("cls.b", Tensor::row_vector(vec![0.0, 60.0]));
    let (_, loss) = run(&p);
    assert!(loss < 1e-20);
}

#[test]
fn batch_cross_entropy_is_the_per_sample_mean() {
    let mut rng = seeded(4);
    let logits = Tensor::uniform(7, 2, 5.0, &mut rng);
    let labels = [0, 1, 1, 0, 1, 0, 0];
    let mut tape = kgalign::numerics::Tape::new();
    let l = tape.constant(logits.clone());
    let loss = tape.cross_entropy(l, &labels);
    let want: f64 = (0..7)
        .map(|r| -softmax(logits.row(r))[labels[r]].ln())
        .sum::<f64>()
        / 7.0;
    assert!((tape.value(loss).item() - want).abs() < 1e-12);
}

#[test]
fn fusion_matches_step_by_step_recomputation() {
    for seed in 0..10 {
        let fx = HeadFixture::new(seed, D);
        let mut s = Session::new(&fx.params);
        let ent = s.param("fixture.ent");
        let out = kgalign::gat::gat_forward(&mut s, &fx.gat, &fx.subgraph, ent, fx.graph.self_relation());
        let text = s.constant(fx.text.clone());
        let tokens = s.constant(fx.image.clone());
        let pooled = s.gather(tokens, &[0]);
        let kg = Context {
            pooled: out.readout,
            tokens: out.states,
        };
        let res = fuse(&mut s, &fx.fusion, text, Some(kg), Context { pooled, tokens }).unwrap();
        let got = probabilities(s.value(res.logits));
        let want = fx.oracle();
        assert!((got[0] - want[0]).abs() < 1e-12 && (got[1] - want[1]).abs() < 1e-12);
        assert!((got[0] + got[1] - 1.0).abs() < 1e-12);
        assert_eq!(res.kg_weights.len(), 4);
        assert_eq!(res.image_weights.len(), 3);
    }
}

#[test]
fn pooled_contexts_reduce_to_singleton_attention() {
    let p = setup(5);
    let mut rng = seeded(6);
    let text = Tensor::uniform(1, D, 1.0, &mut rng);
    let kg = Tensor::uniform(1, D, 1.0, &mut rng);
    let img = Tensor::uniform(1, D, 1.0, &mut rng);
    let noise = Tensor::uniform(4, D, 1.0, &mut rng);
    let cfg = FusionConfig {
        dim: D,
        pooled_only: true,
        use_kg: true,
    };
    let mut s = Session::new(&p);
    let t = s.constant(text.clone());
    let (k, i, n) = (s.constant(kg.clone()), s.constant(img.clone()), s.constant(noise));
    let out = fuse(&mut s, &cfg, t, Some(Context { pooled: k, tokens: n }), Context { pooled: i, tokens: n }).unwrap();
    assert_eq!((out.kg_weights.as_slice(), out.image_weights.as_slice()), (&[1.0][..], &[1.0][..]));
    let (h, _) = cross_attend(&p, KG_STAGE, text.row(0), &mat(&kg));
    let (f, _) = cross_attend(&p, IMAGE_STAGE, &h, &mat(&img));
    assert!(max_abs_diff(&mat(s.value(out.fused)), &vec![f]) < 1e-12);

    let no_kg = FusionConfig { use_kg: false, ..cfg };
    let out = fuse(&mut s, &no_kg, t, None, Context { pooled: i, tokens: n }).unwrap();
    assert!(out.kg_weights.is_empty());
    let (f, _) = cross_attend(&p, IMAGE_STAGE, text.row(0), &mat(&img));
    assert!(max_abs_diff(&mat(s.value(out.fused)), &vec![f]) < 1e-12);
}

#[test]
fn composite_head_gradient_passes_check() {
    for seed in 0..5 {
        let fx = HeadFixture::new(seed, 4);
        let report = grad_check_params(|s: &mut Session| fx.loss(s), &fx.params, 1e-5).unwrap();
        assert!(report.iter().any(|c| c.name == "fixture.ent"));
        assert!(worst(&report) < 1e-4, "{report:?}");
    }
}

proptest! {
    #[test]
    fn context_order_does_not_matter(seed in any::<u64>(), n in 1usize..8, shift in 0usize..8) {
        let p = setup(seed);
        let mut rng = seeded(seed ^ 1);
        let q = Tensor::uniform(1, D, 2.0, &mut rng);
        let c = Tensor::uniform(n, D, 2.0, &mut rng);
        let order: Vec<usize> = (0..n).map(|i| (i + shift) % n).rev().collect();
        let (a, _) = attend_values(&p, &q, &c);
        let (b, _) = attend_values(&p, &q, &c.gather_rows(&order));
        prop_assert!(a.max_abs_diff(&b) < 1e-9);
    }

    #[test]
    fn probabilities_form_a_distribution(a in -15.0f64..15.0, b in -15.0f64..15.0) {
        let [pr, pf] = probabilities(&Tensor::row_vector(vec![a, b]));
        prop_assert!(pr > 0.0 && pf > 0.0 && pr < 1.0 && pf < 1.0);
        prop_assert!((pr + pf - 1.0).abs() < 1e-12);
    }
}
