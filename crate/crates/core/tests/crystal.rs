mod common;

use cast_core::corpus::{generate_crystal, GenConfig};
use cast_core::crystal::io::{parse_structure_line, structure_to_line};
use cast_core::crystal::{build_periodic_graph, permute_structure, rbf_expand, Lattice, RbfSpec};
use proptest::prelude::*;

fn small_cfg() -> GenConfig {
    GenConfig {
        max_sites: 6,
        ..Default::default()
    }
}

#[test]
fn neighbor_lists_match_supercell_brute_force() {
    let rbf = RbfSpec::uniform(5.0, 4).unwrap();
    for seed in 0..20 {
        let s = generate_crystal(1000 + seed, &small_cfg()).unwrap();
        let min_spacing = s.lattice.plane_spacings().into_iter().fold(f64::INFINITY, f64::min);
        for cutoff in [3.0, 0.95 * min_spacing, 5.0] {
            let g = build_periodic_graph(&s, cutoff, &rbf).unwrap();
            let oracle = common::supercell_neighbors(&s, cutoff);
            let got: Vec<_> = g.edges.iter().map(|e| (e.src, e.dst, e.offset)).collect();
            let want: Vec<_> = oracle.iter().map(|o| (o.0, o.1, o.2)).collect();
            assert_eq!(got, want, "seed {seed} cutoff {cutoff}");
            for (e, o) in g.edges.iter().zip(&oracle) {
                assert!((e.distance - o.3).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn one_atom_cubic_cell_has_six_neighbours() {
    let s = common::structure(Lattice::cubic(4.0).unwrap(), &[("Cu", [0.0; 3])]);
    let g = build_periodic_graph(&s, 4.5, &RbfSpec::uniform(4.5, 3).unwrap()).unwrap();
    assert_eq!(g.num_edges(), 6);
    assert!(g.edges.iter().all(|e| (e.distance - 4.0).abs() < 1e-12));
    assert_eq!(g.edges.len(), common::supercell_neighbors(&s, 4.5).len());
}

#[test]
fn rbf_scalar_example() {
    let spec = RbfSpec::new(vec![1.0, 2.0, 3.0], 1.0).unwrap();
    let v = rbf_expand(2.0, &spec);
    let e = (-1.0f64).exp();
    assert!((v[0] - e).abs() < 1e-15 && (v[1] - 1.0).abs() < 1e-15 && (v[2] - e).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn structure_lines_round_trip(seed in any::<u64>()) {
        let s = generate_crystal(seed, &small_cfg()).unwrap();
        let back = parse_structure_line(&structure_to_line(&s)).unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn edges_come_in_reversed_pairs(seed in any::<u64>(), cutoff in 1.5f64..5.0) {
        let s = generate_crystal(seed, &small_cfg()).unwrap();
        let g = build_periodic_graph(&s, cutoff, &RbfSpec::uniform(cutoff, 4).unwrap()).unwrap();
        prop_assert_eq!(g.num_nodes(), s.num_sites());
        for e in &g.edges {
            prop_assert!(e.distance > 0.0 && e.distance <= cutoff);
            let back = [-e.offset[0], -e.offset[1], -e.offset[2]];
            let twin = g.edges.iter().find(|f| f.src == e.dst && f.dst == e.src && f.offset == back);
            prop_assert!(twin.is_some_and(|f| (f.distance - e.distance).abs() < 1e-12));
        }
    }

    #[test]
    fn permuting_sites_relabels_edges(seed in any::<u64>()) {
        let s = generate_crystal(seed, &small_cfg()).unwrap();
        let n = s.num_sites();
        let perm: Vec<usize> = (0..n).rev().collect();
        let p = permute_structure(&s, &perm).unwrap();
        let rbf = RbfSpec::uniform(4.0, 4).unwrap();
        let a = build_periodic_graph(&s, 4.0, &rbf).unwrap();
        let b = build_periodic_graph(&p, 4.0, &rbf).unwrap();
        prop_assert_eq!(a.num_edges(), b.num_edges());
        // new index k holds old site perm[k]
        let mut inv = vec![0; n];
        for (k, &old) in perm.iter().enumerate() {
            inv[old] = k;
        }
        let mut mapped: Vec<_> = a.edges.iter().map(|e| (inv[e.src], inv[e.dst], e.offset)).collect();
        mapped.sort();
        let got: Vec<_> = b.edges.iter().map(|e| (e.src, e.dst, e.offset)).collect();
        prop_assert_eq!(mapped, got);
    }
}
