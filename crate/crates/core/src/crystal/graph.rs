use super::{norm, CrystalStructure, Element};
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Upper bound on periodic images scanned per site pair.
const MAX_IMAGES: i64 = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct RbfSpec {
    pub centers: Vec<f64>,
    pub gamma: f64,
}

impl RbfSpec {
    pub fn new(centers: Vec<f64>, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::Invalid(format!("rbf gamma must be > 0, got {gamma}")));
        }
        if centers.is_empty() || centers.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Invalid(
                "rbf centers must be non-empty and strictly increasing".into(),
            ));
        }
        Ok(Self { centers, gamma })
    }

    /// `k` centers uniform on `[0, cutoff]`, gamma = (k / cutoff)².
    pub fn uniform(cutoff: f64, k: usize) -> Result<Self> {
        if k < 2 || !(cutoff > 0.0) {
            return Err(Error::Invalid("rbf needs k ≥ 2 and cutoff > 0".into()));
        }
        let centers = (0..k).map(|i| cutoff * i as f64 / (k - 1) as f64).collect();
        Self::new(centers, (k as f64 / cutoff).powi(2))
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// `exp(−γ (d − c_k)²)` for each center.
pub fn rbf_expand(distance: f64, spec: &RbfSpec) -> Vec<f64> {
    spec.centers
        .iter()
        .map(|c| (-spec.gamma * (distance - c).powi(2)).exp())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub distance: f64,
    pub offset: [i32; 3],
}

#[derive(Debug, Clone)]
pub struct PeriodicGraph {
    pub node_elements: Vec<Element>,
    pub edges: Vec<Edge>,
    /// `|edges| × K` radial basis features.
    pub edge_features: Tensor,
    pub cutoff: f64,
    /// Nodes with no neighbour inside the cutoff.
    pub isolated: Vec<usize>,
}

impl PeriodicGraph {
    pub fn num_nodes(&self) -> usize {
        self.node_elements.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn sources(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.src).collect()
    }

    pub fn targets(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.dst).collect()
    }

    /// Mean of 1/d over all edges, 0 for an edgeless graph.
    pub fn mean_inverse_distance(&self) -> f64 {
        if self.edges.is_empty() {
            return 0.0;
        }
        self.edges.iter().map(|e| 1.0 / e.distance).sum::<f64>() / self.edges.len() as f64
    }
}

/// Every site pair (including periodic and self images) closer than
/// `cutoff`, zero-distance pairs excluded. Edges sorted by
/// `(src, dst, offset)`; an edge `(i, j, n)` connects site `i` to the image of
/// site `j` translated by lattice vector `n`.
pub fn build_periodic_graph(s: &CrystalStructure, cutoff: f64, rbf: &RbfSpec) -> Result<PeriodicGraph> {
    if !(cutoff > 0.0) || !cutoff.is_finite() {
        return Err(Error::Invalid(format!("cutoff must be > 0, got {cutoff}")));
    }
    let lat = &s.lattice;
    let spacing = lat.plane_spacings();
    let reach: Vec<i64> = spacing
        .iter()
        .map(|d| (cutoff / d).ceil() as i64 + 1)
        .collect();
    let images: i64 = reach.iter().map(|r| 2 * r + 1).product();
    if !(1..=MAX_IMAGES).contains(&images) {
        return Err(Error::Structure(format!(
            "cutoff {cutoff} spans {images} periodic images; lattice too thin"
        )));
    }

    let sites = s.sites();
    let cart: Vec<_> = sites.iter().map(|x| lat.to_cartesian(x.frac())).collect();
    let basis = lat.basis();
    let mut edges = Vec::new();
    for (i, ci) in cart.iter().enumerate() {
        for (j, cj) in cart.iter().enumerate() {
            for a in -reach[0]..=reach[0] {
                for b in -reach[1]..=reach[1] {
                    for c in -reach[2]..=reach[2] {
                        let mut d = [0.0; 3];
                        for k in 0..3 {
                            d[k] = cj[k] - ci[k]
                                + a as f64 * basis[0][k]
                                + b as f64 * basis[1][k]
                                + c as f64 * basis[2][k];
                        }
                        let dist = norm(d);
                        if dist <= cutoff && dist > 1e-8 {
                            edges.push(Edge {
                                src: i,
                                dst: j,
                                distance: dist,
                                offset: [a as i32, b as i32, c as i32],
                            });
                        }
                    }
                }
            }
        }
    }
    edges.sort_by_key(|x| (x.src, x.dst, x.offset));

    let k = rbf.len();
    let mut feats = Vec::with_capacity(edges.len() * k);
    for e in &edges {
        feats.extend(rbf_expand(e.distance, rbf));
    }
    let mut has_edge = vec![false; sites.len()];
    for e in &edges {
        has_edge[e.src] = true;
    }
    let isolated = (0..sites.len()).filter(|&i| !has_edge[i]).collect();
    Ok(PeriodicGraph {
        node_elements: s.elements(),
        edge_features: Tensor::matrix(edges.len(), k, feats)?,
        edges,
        cutoff,
        isolated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crystal::tests::structure;
    use crate::crystal::{permute_structure, Lattice};
    use proptest::prelude::*;

    /// Brute force over the 3×3×3 supercell; exact whenever the cutoff is
    /// below every plane spacing.
    fn supercell_oracle(s: &CrystalStructure, cutoff: f64) -> Vec<(usize, usize, i64, [i32; 3])> {
        let mut out = Vec::new();
        for (i, si) in s.sites().iter().enumerate() {
            for (j, sj) in s.sites().iter().enumerate() {
                for a in -1..=1 {
                    for b in -1..=1 {
                        for c in -1..=1 {
                            let f = [
                                sj.frac()[0] + a as f64 - si.frac()[0],
                                sj.frac()[1] + b as f64 - si.frac()[1],
                                sj.frac()[2] + c as f64 - si.frac()[2],
                            ];
                            let d = norm(s.lattice.to_cartesian(f));
                            if d <= cutoff && d > 1e-8 {
                                out.push((i, j, (d * 1e9).round() as i64, [a, b, c]));
                            }
                        }
                    }
                }
            }
        }
        out.sort();
        out
    }

    fn as_multiset(g: &PeriodicGraph) -> Vec<(usize, usize, i64, [i32; 3])> {
        let mut v: Vec<_> = g
            .edges
            .iter()
            .map(|e| (e.src, e.dst, (e.distance * 1e9).round() as i64, e.offset))
            .collect();
        v.sort();
        v
    }

    #[test]
    fn simple_cubic_six_neighbours() {
        let s = structure(Lattice::cubic(4.0).unwrap(), &[("Po", [0.0; 3])]);
        let g = build_periodic_graph(&s, 4.5, &RbfSpec::uniform(4.5, 16).unwrap()).unwrap();
        assert_eq!(g.num_edges(), 6);
        assert!(g.edges.iter().all(|e| (e.distance - 4.0).abs() < 1e-12));
        assert_eq!(as_multiset(&g), supercell_oracle(&s, 4.5));
        assert_eq!(g.edge_features.shape(), &[6, 16]);
    }

    #[test]
    fn tiny_cutoff_gives_no_edges() {
        let s = structure(
            Lattice::cubic(5.0).unwrap(),
            &[("Na", [0.0; 3]), ("Cl", [0.5, 0.0, 0.0])],
        );
        let g = build_periodic_graph(&s, 1.0, &RbfSpec::uniform(1.0, 4).unwrap()).unwrap();
        assert_eq!(g.num_edges(), 0);
        assert_eq!(g.isolated, vec![0, 1]);
        assert_eq!(g.num_nodes(), 2);
    }

    #[test]
    fn rock_salt_pair_matches_oracle() {
        let s = structure(
            Lattice::cubic(5.64).unwrap(),
            &[("Na", [0.0; 3]), ("Cl", [0.5, 0.5, 0.5])],
        );
        // nearest Na–Cl is √3/2·a ≈ 4.884
        let cutoff = 4.9;
        let g = build_periodic_graph(&s, cutoff, &RbfSpec::uniform(cutoff, 8).unwrap()).unwrap();
        assert_eq!(as_multiset(&g), supercell_oracle(&s, cutoff));
        assert_eq!(g.edges.iter().filter(|e| e.src == 0 && e.dst == 1).count(), 8);
    }

    #[test]
    fn rbf_values() {
        let spec = RbfSpec::new(vec![1.0, 2.0, 3.0], 1.0).unwrap();
        let v = rbf_expand(2.0, &spec);
        let e1 = (-1f64).exp();
        assert!((v[0] - e1).abs() < 1e-15 && v[1] == 1.0 && (v[2] - e1).abs() < 1e-15);
        let sharp = RbfSpec::new(vec![1.0, 2.0], 1e6).unwrap();
        assert!(rbf_expand(1.5, &sharp).iter().all(|&x| x < 1e-100));
        assert!(RbfSpec::new(vec![1.0, 1.0], 1.0).is_err());
        assert!(RbfSpec::new(vec![], 1.0).is_err());
        assert!(RbfSpec::new(vec![1.0], 0.0).is_err());
    }

    #[test]
    fn swapping_identical_elements_is_isomorphic() {
        let s = structure(
            Lattice::cubic(5.0).unwrap(),
            &[("O", [0.1, 0.2, 0.3]), ("Ti", [0.5; 3]), ("O", [0.8, 0.6, 0.1])],
        );
        let rbf = RbfSpec::uniform(4.0, 8).unwrap();
        let perm = [2, 1, 0];
        let p = permute_structure(&s, &perm).unwrap();
        let g = build_periodic_graph(&s, 4.0, &rbf).unwrap();
        let gp = build_periodic_graph(&p, 4.0, &rbf).unwrap();
        assert_eq!(g.node_elements, gp.node_elements);
        assert_eq!(relabel(&g, &perm), as_multiset(&gp));
    }

    /// Graph edges of `g` renamed under `perm` (new k = old perm[k]).
    fn relabel(g: &PeriodicGraph, perm: &[usize]) -> Vec<(usize, usize, i64, [i32; 3])> {
        let mut inv = vec![0; perm.len()];
        for (k, &p) in perm.iter().enumerate() {
            inv[p] = k;
        }
        let mut v: Vec<_> = g
            .edges
            .iter()
            .map(|e| (inv[e.src], inv[e.dst], (e.distance * 1e9).round() as i64, e.offset))
            .collect();
        v.sort();
        v
    }

    fn arb_structure() -> impl Strategy<Value = CrystalStructure> {
        (
            (5.0f64..8.0, 5.0f64..8.0, 5.0f64..8.0),
            (80.0f64..100.0, 80.0f64..100.0, 80.0f64..100.0),
            proptest::collection::vec(
                (0usize..4, (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0)),
                1..=6,
            ),
        )
            .prop_map(|((a, b, c), (al, be, ga), sites)| {
                let lat = Lattice::from_parameters(a, b, c, al, be, ga).unwrap();
                let syms = ["Li", "O", "Fe", "S"];
                let sites: Vec<(&str, [f64; 3])> =
                    sites.into_iter().map(|(e, (x, y, z))| (syms[e], [x, y, z])).collect();
                structure(lat, &sites)
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn matches_supercell_oracle(s in arb_structure()) {
            let cutoff = s.lattice.plane_spacings().iter().cloned().fold(f64::INFINITY, f64::min) * 0.95;
            let g = build_periodic_graph(&s, cutoff, &RbfSpec::uniform(cutoff, 8).unwrap()).unwrap();
            prop_assert_eq!(as_multiset(&g), supercell_oracle(&s, cutoff));
        }

        #[test]
        fn directed_pairs_are_symmetric(s in arb_structure(), cutoff in 2.0f64..6.0) {
            let g = build_periodic_graph(&s, cutoff, &RbfSpec::uniform(cutoff, 8).unwrap()).unwrap();
            for e in &g.edges {
                prop_assert!(e.distance > 0.0 && e.distance <= cutoff);
                let back = [-e.offset[0], -e.offset[1], -e.offset[2]];
                prop_assert!(g.edges.iter().any(|r| r.src == e.dst && r.dst == e.src
                    && r.offset == back && (r.distance - e.distance).abs() < 1e-9));
            }
            prop_assert_eq!(g.num_nodes(), s.num_sites());
        }

        #[test]
        fn permutation_equivariant(s in arb_structure(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut perm: Vec<usize> = (0..s.num_sites()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let rbf = RbfSpec::uniform(4.0, 8).unwrap();
            let g = build_periodic_graph(&s, 4.0, &rbf).unwrap();
            let gp = build_periodic_graph(&permute_structure(&s, &perm).unwrap(), 4.0, &rbf).unwrap();
            prop_assert_eq!(relabel(&g, &perm), as_multiset(&gp));
        }
    }
}
