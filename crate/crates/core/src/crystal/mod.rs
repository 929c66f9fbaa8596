//! Periodic crystal structures and their conversion to distance-featured
//! graphs.

pub mod elements;
mod graph;
pub mod io;

pub use elements::{Element, NUM_ELEMENTS};
pub use graph::{build_periodic_graph, rbf_expand, Edge, PeriodicGraph, RbfSpec};

use crate::corpus::GlobalTags;
use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Rows are the lattice vectors, in ångström.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    basis: [Vec3; 3],
}

impl Lattice {
    pub fn new(basis: [Vec3; 3]) -> Result<Self> {
        if basis.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Structure("lattice has non-finite entries".into()));
        }
        let l = Self { basis };
        let det = l.determinant();
        if !(det > 1e-6) {
            return Err(Error::Structure(format!(
                "lattice determinant {det} is not positive"
            )));
        }
        Ok(l)
    }

    pub fn cubic(a: f64) -> Result<Self> {
        Self::new([[a, 0.0, 0.0], [0.0, a, 0.0], [0.0, 0.0, a]])
    }

    /// Lattice from lengths (Å) and angles α, β, γ (degrees).
    pub fn from_parameters(a: f64, b: f64, c: f64, alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let (al, be, ga) = (alpha.to_radians(), beta.to_radians(), gamma.to_radians());
        let cx = c * be.cos();
        let cy = c * (al.cos() - be.cos() * ga.cos()) / ga.sin();
        let cz2 = c * c - cx * cx - cy * cy;
        if !(cz2 > 0.0) {
            return Err(Error::Structure("lattice angles are inconsistent".into()));
        }
        Self::new([
            [a, 0.0, 0.0],
            [b * ga.cos(), b * ga.sin(), 0.0],
            [cx, cy, cz2.sqrt()],
        ])
    }

    pub fn basis(&self) -> &[Vec3; 3] {
        &self.basis
    }

    pub fn determinant(&self) -> f64 {
        let [a, b, c] = self.basis;
        dot(a, cross(b, c))
    }

    pub fn volume(&self) -> f64 {
        self.determinant()
    }

    pub fn lengths(&self) -> Vec3 {
        self.basis.map(norm)
    }

    /// Distances between opposite lattice planes, `1/|b_k|`.
    pub fn plane_spacings(&self) -> Vec3 {
        let [a, b, c] = self.basis;
        let v = self.volume();
        [norm(cross(b, c)), norm(cross(c, a)), norm(cross(a, b))].map(|x| v / x)
    }

    pub fn to_cartesian(&self, frac: Vec3) -> Vec3 {
        let mut out = [0.0; 3];
        for (k, f) in frac.iter().enumerate() {
            for d in 0..3 {
                out[d] += f * self.basis[k][d];
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtomSite {
    pub element: Element,
    frac: Vec3,
}

pub fn wrap_frac(x: f64) -> f64 {
    let w = x - x.floor();
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

impl AtomSite {
    pub fn new(element: Element, frac: Vec3) -> Result<Self> {
        if frac.iter().any(|v| !v.is_finite()) {
            return Err(Error::Structure("non-finite fractional coordinate".into()));
        }
        Ok(Self {
            element,
            frac: frac.map(wrap_frac),
        })
    }

    pub fn frac(&self) -> Vec3 {
        self.frac
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrystalStructure {
    pub id: String,
    pub lattice: Lattice,
    sites: Vec<AtomSite>,
    pub tags: GlobalTags,
}

impl CrystalStructure {
    pub fn new(id: impl Into<String>, lattice: Lattice, sites: Vec<AtomSite>, tags: GlobalTags) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::Structure("structure has no sites".into()));
        }
        tags.validate()?;
        Ok(Self {
            id: id.into(),
            lattice,
            sites,
            tags,
        })
    }

    pub fn sites(&self) -> &[AtomSite] {
        &self.sites
    }

    pub fn num_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn elements(&self) -> Vec<Element> {
        self.sites.iter().map(|s| s.element).collect()
    }

    /// Distinct elements in order of first appearance.
    pub fn species(&self) -> Vec<Element> {
        let mut out: Vec<Element> = Vec::new();
        for s in &self.sites {
            if !out.contains(&s.element) {
                out.push(s.element);
            }
        }
        out
    }

    /// Formula in order of first appearance, counts of 1 omitted: `AlTe3`.
    pub fn formula(&self) -> String {
        let mut out = String::new();
        for el in self.species() {
            let n = self.sites.iter().filter(|s| s.element == el).count();
            out.push_str(el.symbol());
            if n > 1 {
                out.push_str(&n.to_string());
            }
        }
        out
    }
}

/// Reorders sites so that new site `k` is old site `perm[k]`.
pub fn permute_structure(s: &CrystalStructure, perm: &[usize]) -> Result<CrystalStructure> {
    let n = s.num_sites();
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(Error::Invalid(format!(
            "permutation has {} entries for {n} sites",
            perm.len()
        )));
    }
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::Invalid("permutation is not a bijection".into()));
        }
        seen[p] = true;
    }
    let mut out = s.clone();
    out.sites = perm.iter().map(|&p| s.sites[p].clone()).collect();
    Ok(out)
}

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn el(sym: &str) -> Element {
        Element::from_symbol(sym).unwrap()
    }

    pub fn structure(lattice: Lattice, sites: &[(&str, Vec3)]) -> CrystalStructure {
        CrystalStructure::new(
            "t",
            lattice,
            sites
                .iter()
                .map(|(e, f)| AtomSite::new(el(e), *f).unwrap())
                .collect(),
            GlobalTags::example(),
        )
        .unwrap()
    }

    #[test]
    fn lattice_invariants() {
        assert!(Lattice::new([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]]).is_err());
        assert!(Lattice::new([[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, 1.0]]).is_err());
        assert!(Lattice::new([[f64::NAN, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).is_err());
        let l = Lattice::from_parameters(4.0, 5.0, 6.0, 90.0, 90.0, 90.0).unwrap();
        assert!((l.volume() - 120.0).abs() < 1e-9);
        let s = l.plane_spacings();
        assert!((s[0] - 4.0).abs() < 1e-9 && (s[2] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn frac_coords_wrap() {
        let s = AtomSite::new(el("O"), [1.25, -0.25, -1e-18]).unwrap();
        let f = s.frac();
        assert!((f[0] - 0.25).abs() < 1e-15 && (f[1] - 0.75).abs() < 1e-15);
        assert!(f.iter().all(|&v| (0.0..1.0).contains(&v)));
    }

    #[test]
    fn permutation_rules() {
        let s = structure(
            Lattice::cubic(5.0).unwrap(),
            &[("Na", [0.0; 3]), ("Cl", [0.5; 3]), ("O", [0.1, 0.2, 0.3]), ("Fe", [0.7, 0.1, 0.4])],
        );
        assert_eq!(permute_structure(&s, &[0, 1, 2, 3]).unwrap(), s);
        let r = permute_structure(&s, &[3, 2, 1, 0]).unwrap();
        let mut rev = s.elements();
        rev.reverse();
        assert_eq!(r.elements(), rev);
        assert_eq!(r.lattice, s.lattice);
        assert!(permute_structure(&s, &[0, 0, 1, 2]).is_err());
        assert!(permute_structure(&s, &[0, 1, 2]).is_err());
    }

    #[test]
    fn formula_order() {
        let s = structure(
            Lattice::cubic(6.0).unwrap(),
            &[("Al", [0.0; 3]), ("Te", [0.5; 3]), ("Te", [0.1; 3]), ("Te", [0.3; 3])],
        );
        assert_eq!(s.formula(), "AlTe3");
    }
}
