use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::truth::TRUTH_CUTOFF;
use crate::crystal::{build_periodic_graph, CrystalStructure, Element, RbfSpec};

/// Neighbours within this margin of a site's nearest distance count as bonded.
const BOND_MARGIN: f64 = 0.3;

fn bonded_species(s: &CrystalStructure) -> Vec<(Element, Vec<Element>)> {
    let species = s.species();
    let Ok(rbf) = RbfSpec::uniform(TRUTH_CUTOFF, 2) else {
        return Vec::new();
    };
    let Ok(g) = build_periodic_graph(s, TRUTH_CUTOFF, &rbf) else {
        return Vec::new();
    };
    let n = s.num_sites();
    let mut nearest = vec![f64::INFINITY; n];
    for e in &g.edges {
        nearest[e.src] = nearest[e.src].min(e.distance);
    }
    let elems = s.elements();
    let mut out = Vec::new();
    for &a in &species {
        let mut hit = vec![false; species.len()];
        for e in &g.edges {
            if elems[e.src] == a && e.distance <= nearest[e.src] + BOND_MARGIN {
                let k = species.iter().position(|x| *x == elems[e.dst]).expect("known species");
                hit[k] = true;
            }
        }
        let list: Vec<Element> = species.iter().zip(&hit).filter(|(_, h)| **h).map(|(e, _)| *e).collect();
        if !list.is_empty() {
            out.push((a, list));
        }
    }
    out
}

fn join_and(items: &[String]) -> String {
    match items.len() {
        0 => String::new(),
        1 => items[0].clone(),
        2 => format!("{} and {}", items[0], items[1]),
        n => format!("{}, and {}", items[..n - 1].join(", "), items[n - 1]),
    }
}

/// Templated description of `s`. Contains the formula, every element
/// symbol, the crystal system, the space-group label, the sharing mode and
/// the bond-length range rounded to two decimals.
pub fn describe(s: &CrystalStructure) -> String {
    let t = &s.tags;
    let n = s.num_sites();
    let elems = s.elements();
    let mut out = format!(
        "{} crystallizes in the {} {} space group.",
        s.formula(),
        t.crystal_system.name(),
        t.space_group_label
    );
    for sp in s.species() {
        let k = elems.iter().filter(|e| **e == sp).count();
        out.push_str(&format!(" {sp} atoms occupy {k} of the {n} sites."));
    }
    for (a, list) in bonded_species(s) {
        let names: Vec<String> = list.iter().map(|e| e.to_string()).collect();
        out.push_str(&format!(" {a} is bonded to {} atoms.", join_and(&names)));
    }
    let species = s.species();
    let centre = species[0];
    let ligand = *species.last().expect("non-empty");
    let octa = if centre == ligand {
        format!("{centre}6")
    } else {
        format!("{centre}{ligand}6")
    };
    let m = t.sharing_mode;
    for (on, kind) in [
        (m.edge_sharing, "an edge-sharing"),
        (m.corner_sharing, "a corner-sharing"),
        (m.face_sharing, "a face-sharing"),
    ] {
        if on {
            out.push_str(&format!(" The structure forms {kind} {octa} octahedra."));
        }
    }
    if let Some(tilt) = t.octahedral_tilt {
        out.push_str(&format!(" The octahedral tilt angle is {tilt:.2} degrees."));
    }
    let (lo, hi) = t.bond_range;
    out.push_str(&format!(
        " It has bond distances ranging from {lo:.2} to {hi:.2} angstroms."
    ));
    out
}

/// `describe`, or the empty string with probability `dropout`.
pub fn describe_with_dropout(s: &CrystalStructure, dropout: f64, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if rng.gen::<f64>() < dropout {
        String::new()
    } else {
        describe(s)
    }
}
