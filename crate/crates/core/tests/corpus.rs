mod common;

use cast_core::corpus::{
    apply_filters, corpus_to_line, generate_corpus, generate_crystal, ground_truth_property, parse_corpus_line,
    truth_mean_inverse_distance, Coefficients, CorpusConfig, FilterConfig, FilterDecision, GenConfig, Property,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

#[test]
fn twelve_record_filter_table() {
    let fixture = common::filter_fixture();
    assert_eq!(fixture.len(), 12);
    let cfg = FilterConfig::default();
    for (name, rec, elements, want) in &fixture {
        assert_eq!(apply_filters(rec, elements, &cfg), *want, "{name}");
    }
}

#[test]
fn tag_coefficients_are_recovered_by_least_squares() {
    let gen = GenConfig::default();
    let structures: Vec<_> = (0..500).map(|i| generate_crystal(7_000 + i, &gen).unwrap()).collect();
    for p in Property::ALL {
        let c = Coefficients::for_property(p);
        let mut x = DMatrix::<f64>::zeros(structures.len(), 10);
        let mut y = DVector::<f64>::zeros(structures.len());
        for (r, s) in structures.iter().enumerate() {
            let v = ground_truth_property(s, p, 0.0, r as u64).unwrap();
            y[r] = v - c.local(s, truth_mean_inverse_distance(s).unwrap());
            x[(r, s.tags.crystal_system.index())] = 1.0;
            let m = s.tags.sharing_mode;
            for (k, flag) in [m.edge_sharing, m.corner_sharing, m.face_sharing].into_iter().enumerate() {
                x[(r, 7 + k)] = if flag { 1.0 } else { 0.0 };
            }
        }
        let beta = x.clone().svd(true, true).solve(&y, 1e-12).unwrap();
        let want: Vec<f64> = c.system.iter().chain(c.sharing.iter()).copied().collect();
        for (k, w) in want.iter().enumerate() {
            assert!((beta[k] - w).abs() < 1e-6, "{p} coefficient {k}: {} vs {w}", beta[k]);
        }
    }
}

#[test]
fn refiltering_the_kept_set_drops_nothing() {
    let cfg = CorpusConfig {
        size: 300,
        seed: 5,
        ..Default::default()
    };
    let corpus = generate_corpus(&cfg).unwrap();
    let dropped = corpus.iter().filter(|s| !s.kept()).count();
    assert!(dropped > 0, "outliers should exercise the filters");
    for s in corpus.iter().filter(|s| s.kept()) {
        let again = apply_filters(&s.record, &s.structure.elements(), &cfg.filter);
        assert_eq!(again, FilterDecision::Keep);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn corpus_lines_round_trip(seed in any::<u64>()) {
        let cfg = CorpusConfig { size: 6, seed, ..Default::default() };
        for s in generate_corpus(&cfg).unwrap() {
            let line = corpus_to_line(&s);
            prop_assert!(!line.contains('\n'));
            prop_assert_eq!(parse_corpus_line(&line).unwrap(), s);
        }
    }
}
