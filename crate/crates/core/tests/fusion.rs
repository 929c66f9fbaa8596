mod common;

use cast_core::crystal::{build_periodic_graph, permute_structure};
use cast_core::fusion::{contrastive_loss, AttentionMap, Model, ModelInput, Variant};
use cast_core::nn::{finite_diff_check, GradCheckOptions, Graph, Init, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cast_model(seed: u64) -> (ParamStore, Model) {
    let mut store = ParamStore::new(seed);
    let m = Model::new(&mut store, Variant::Cast, &common::tiny_config(), common::TINY_VOCAB, 4).unwrap();
    (store, m)
}

fn forward(store: &ParamStore, m: &Model, x: &ModelInput) -> (Tensor, Vec<AttentionMap>) {
    let mut g = Graph::new(store);
    let mut maps = Vec::new();
    let h = m.node_states(&mut g, x, &vec![false; x.graph.num_nodes()], Some(&mut maps)).unwrap();
    (g.value(h).clone(), maps)
}

fn prediction(store: &ParamStore, m: &Model, x: &ModelInput) -> f64 {
    let mut g = Graph::new(store);
    let p = m.predict(&mut g, x).unwrap();
    g.value(p).item()
}

#[test]
fn attention_rows_are_distributions() {
    let cfg = common::tiny_config();
    for seed in 0..100 {
        let (store, m) = cast_model(seed);
        let x = common::random_input(&cfg, seed);
        let (_, maps) = forward(&store, &m, &x);
        assert_eq!(maps.len(), cfg.fusion_layers * cfg.fusion_heads);
        for map in &maps {
            assert_eq!(map.weights.shape(), &[x.graph.num_nodes(), x.tokens.len()]);
            for r in 0..map.weights.rows() {
                let row = map.weights.row(r);
                assert!(row.iter().all(|&w| w >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                for (t, &w) in x.tokens.iter().zip(row) {
                    if *t == cast_core::encoders::PAD {
                        assert_eq!(w, 0.0);
                    }
                }
            }
        }
    }
}

#[test]
fn single_token_text_gets_all_attention() {
    let cfg = common::tiny_config();
    let (store, m) = cast_model(1);
    let x = common::tiny_input(&cfg, vec![cast_core::encoders::CLS]);
    let (_, maps) = forward(&store, &m, &x);
    for map in maps {
        assert!(map.weights.data().iter().all(|&w| w == 1.0));
    }
}

#[test]
fn recording_is_passive() {
    let cfg = common::tiny_config();
    let (store, m) = cast_model(2);
    let x = common::random_input(&cfg, 9);
    let (with, _) = forward(&store, &m, &x);
    let mut g = Graph::new(&store);
    let h = m.node_states(&mut g, &x, &vec![false; x.graph.num_nodes()], None).unwrap();
    assert_eq!(g.value(h), &with);
}

#[test]
fn node_permutation_permutes_states_and_attention() {
    let cfg = common::tiny_config();
    let (store, m) = cast_model(4);
    let s = common::three_site();
    let perm = [2, 0, 1];
    let p = permute_structure(&s, &perm).unwrap();
    let build = |s: &cast_core::crystal::CrystalStructure| ModelInput {
        id: "p".into(),
        graph: build_periodic_graph(s, cfg.structure.cutoff, &cfg.structure.rbf()).unwrap(),
        tokens: common::eight_tokens(),
        descriptors: vec![],
    };
    let (a, amaps) = forward(&store, &m, &build(&s));
    let (b, bmaps) = forward(&store, &m, &build(&p));
    for (k, &old) in perm.iter().enumerate() {
        for (x, y) in b.row(k).iter().zip(a.row(old)) {
            assert!((x - y).abs() < 1e-10);
        }
        for (ma, mb) in amaps.iter().zip(&bmaps) {
            for (x, y) in mb.weights.row(k).iter().zip(ma.weights.row(old)) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }
    let pa = prediction(&store, &m, &build(&s));
    let pb = prediction(&store, &m, &build(&p));
    assert!((pa - pb).abs() < 1e-10);
}

#[test]
fn concat_ignores_text_when_its_projection_is_zero() {
    let cfg = common::tiny_config();
    let mut store = ParamStore::new(5);
    let m = Model::new(&mut store, Variant::Concat, &cfg, common::TINY_VOCAB, 4).unwrap();
    for name in ["text_proj.w", "text_proj.b"] {
        let id = store.id(name).unwrap();
        store.value_mut(id).data_mut().fill(0.0);
    }
    let a = common::tiny_input(&cfg, common::eight_tokens());
    let b = common::tiny_input(&cfg, vec![cast_core::encoders::CLS, 7, 7]);
    assert_eq!(prediction(&store, &m, &a), prediction(&store, &m, &b));
}

#[test]
fn descriptor_flip_changes_prediction() {
    let cfg = common::tiny_config();
    let mut store = ParamStore::new(6);
    let m = Model::new(&mut store, Variant::Desc, &cfg, common::TINY_VOCAB, 4).unwrap();
    let a = common::tiny_input(&cfg, common::eight_tokens());
    let mut b = a.clone();
    b.descriptors[0] = -b.descriptors[0];
    assert_ne!(prediction(&store, &m, &a), prediction(&store, &m, &b));
    let mut bad = a.clone();
    bad.descriptors.pop();
    let mut g = Graph::new(&store);
    assert!(m.predict(&mut g, &bad).is_err());
}

/// Direct summation of the symmetric InfoNCE loss.
#[test]
fn info_nce_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let mut draw = || (0..3).map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect::<Vec<Vec<f64>>>();
        let (zs, zt) = (draw(), draw());
        let tau = 0.07;
        let got = common::info_nce_loss(&zs, &zt, tau).unwrap();
        let want = common::info_nce_oracle(&zs, &zt, tau);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
    let same = vec![vec![0.3, -0.2, 0.9]; 4];
    assert!((common::info_nce_loss(&same, &same, 0.07).unwrap() - 4f64.ln()).abs() < 1e-12);
    let aligned = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    assert!(common::info_nce_loss(&aligned, &aligned, 1e-3).unwrap() < 1e-12);
    assert!(common::info_nce_loss(&aligned[..1], &aligned[..1], 0.07).is_err());
}

#[test]
fn info_nce_gradients_match_differences() {
    let mut store = ParamStore::new(12);
    let zs = store.add("zs", &[3, 4], Init::Uniform(1.0)).unwrap();
    let zt = store.add("zt", &[3, 4], Init::Uniform(1.0)).unwrap();
    let lt = store.add("log_tau", &[1, 1], Init::Const(0.07f64.ln())).unwrap();
    let objective = |s: &ParamStore| {
        let mut g = Graph::new(s);
        let (a, b, t) = (g.param(zs), g.param(zt), g.param(lt));
        let l = contrastive_loss(&mut g, a, b, t)?;
        Ok((g.value(l).item(), g.backward(l)?))
    };
    let opts = GradCheckOptions {
        min_coords: 25,
        ..Default::default()
    };
    let r = finite_diff_check(&mut store, objective, &opts).unwrap();
    assert_eq!(r.coords_checked, 25);
    assert!(r.max_rel_error < 1e-6, "{:?}", r.worst);
}

/// Whole-model gradients. Coordinates whose gradient is near zero cannot
/// be resolved by central differences in f64 (the numeric side is one ulp
/// of the loss over 2ε, about 1e-10 here), so those are held to an absolute
/// bound and everything else to a 1e-6 relative one.
#[test]
fn model_gradients_match_differences() {
    for (variant, coords) in [
        (Variant::Cast, Some(3000)),
        (Variant::GraphOnly, None),
        (Variant::TextOnly, None),
        (Variant::Concat, None),
        (Variant::ConcatFrozenText, None),
        (Variant::Desc, None),
    ] {
        let r = common::model_gradcheck(variant, 0, coords);
        assert!(common::max_rel_error_above(&r, 1e-4) < 1e-6, "{variant}: {:?}", r.worst);
        for c in &r.coords {
            assert!(
                (c.analytic - c.numeric).abs() < 1e-9 || c.rel_error < 1e-6,
                "{variant} {}[{}]: {} vs {}",
                c.param,
                c.index,
                c.analytic,
                c.numeric
            );
        }
    }
}
