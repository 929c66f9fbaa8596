use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tags::{CrystalSystem, GlobalTags, SharingMode};
use crate::crystal::{norm, AtomSite, CrystalStructure, Element, Lattice};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub min_sites: usize,
    pub max_sites: usize,
    pub min_length: f64,
    pub max_length: f64,
    /// Maximum deviation of lattice angles from 90°.
    pub angle_jitter: f64,
    /// Minimum periodic distance between any two sites (Å).
    pub min_separation: f64,
    /// Relative frequencies of the seven crystal systems.
    pub system_weights: [f64; 7],
    pub element_pool: Vec<String>,
    pub max_species: usize,
    pub noble_gas_prob: f64,
    pub sharing_prob: f64,
    pub tilt_defined_prob: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            min_sites: 2,
            max_sites: 8,
            min_length: 3.0,
            max_length: 8.0,
            angle_jitter: 10.0,
            min_separation: 1.7,
            system_weights: [1.0; 7],
            element_pool: [
                "Li", "O", "F", "Na", "Mg", "Al", "Si", "S", "Cl", "K", "Ca", "Ti", "Fe", "Cu", "Zn",
                "Ga", "Sr", "Te", "Ba", "Pb",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            max_species: 3,
            noble_gas_prob: 0.01,
            sharing_prob: 0.4,
            tilt_defined_prob: 0.2,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, r: &str| Err(Error::config(format!("corpus.gen.{f}"), r));
        if self.min_sites < 1 || self.min_sites > self.max_sites || self.max_sites > 64 {
            return bad("min_sites", "need 1 ≤ min_sites ≤ max_sites ≤ 64");
        }
        if !(self.min_length > 0.0 && self.min_length <= self.max_length) {
            return bad("min_length", "need 0 < min_length ≤ max_length");
        }
        if !(0.0..=30.0).contains(&self.angle_jitter) {
            return bad("angle_jitter", "must be in [0, 30] degrees");
        }
        if self.system_weights.iter().any(|w| !(*w >= 0.0)) || self.system_weights.iter().sum::<f64>() <= 0.0 {
            return bad("system_weights", "weights must be ≥ 0 with positive sum");
        }
        if self.element_pool.is_empty() {
            return bad("element_pool", "must not be empty");
        }
        for s in &self.element_pool {
            if Element::from_symbol(s).is_none() {
                return bad("element_pool", &format!("unknown element `{s}`"));
            }
        }
        if self.max_species < 1 {
            return bad("max_species", "must be ≥ 1");
        }
        for (f, p) in [
            ("noble_gas_prob", self.noble_gas_prob),
            ("sharing_prob", self.sharing_prob),
            ("tilt_defined_prob", self.tilt_defined_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(f, "must be a probability");
            }
        }
        Ok(())
    }

    pub fn system_probabilities(&self) -> [f64; 7] {
        let s: f64 = self.system_weights.iter().sum();
        self.system_weights.map(|w| w / s)
    }
}

fn min_image_distance(lat: &Lattice, a: [f64; 3], b: [f64; 3]) -> f64 {
    let mut best = f64::INFINITY;
    for i in -1..=1 {
        for j in -1..=1 {
            for k in -1..=1 {
                let f = [
                    b[0] - a[0] + i as f64,
                    b[1] - a[1] + j as f64,
                    b[2] - a[2] + k as f64,
                ];
                best = best.min(norm(lat.to_cartesian(f)));
            }
        }
    }
    best
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Deterministic synthetic crystal for `seed`.
pub fn generate_crystal(seed: u64, cfg: &GenConfig) -> Result<CrystalStructure> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(cfg.min_sites..=cfg.max_sites);

    // tags are drawn independently of geometry so the graph cannot infer them
    let probs = cfg.system_probabilities();
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut system = CrystalSystem::Cubic;
    for (c, p) in CrystalSystem::ALL.iter().zip(probs) {
        acc += p;
        if u < acc {
            system = *c;
            break;
        }
    }
    let sg = system.space_groups().choose(&mut rng).expect("non-empty").to_string();
    let sharing = SharingMode {
        edge_sharing: rng.gen_bool(cfg.sharing_prob),
        corner_sharing: rng.gen_bool(cfg.sharing_prob),
        face_sharing: rng.gen_bool(cfg.sharing_prob),
    };
    let lo = round2(rng.gen_range(1.8..2.6));
    let hi = round2(lo + rng.gen_range(0.02..0.4));
    let tilt = rng
        .gen_bool(cfg.tilt_defined_prob)
        .then(|| round2(rng.gen_range(0.0..25.0)));
    let tags = GlobalTags {
        crystal_system: system,
        space_group_label: sg,
        sharing_mode: sharing,
        bond_range: (lo, hi),
        octahedral_tilt: tilt,
    };

    let pool: Vec<Element> = cfg
        .element_pool
        .iter()
        .filter_map(|s| Element::from_symbol(s))
        .collect();
    let n_species = rng.gen_range(1..=cfg.max_species.min(n).min(pool.len()));
    let mut species: Vec<Element> = pool.choose_multiple(&mut rng, n_species).cloned().collect();
    if rng.gen_bool(cfg.noble_gas_prob) {
        let gases = ["Ar", "Kr", "Xe"];
        species[0] = Element::from_symbol(gases.choose(&mut rng).expect("non-empty")).expect("known");
    }
    let mut elements: Vec<Element> = species.clone();
    while elements.len() < n {
        elements.push(*species.choose(&mut rng).expect("non-empty"));
    }
    elements.shuffle(&mut rng);

    let min_volume = 11.0 * n as f64;
    for _attempt in 0..1000 {
        let mut len = [0.0; 3];
        for l in &mut len {
            *l = rng.gen_range(cfg.min_length..=cfg.max_length);
        }
        let prod: f64 = len.iter().product();
        if prod < min_volume {
            let scale = (min_volume / prod).cbrt();
            len = len.map(|l| (l * scale).min(cfg.max_length));
        }
        let j = cfg.angle_jitter;
        let ang: [f64; 3] = std::array::from_fn(|_| 90.0 + if j > 0.0 { rng.gen_range(-j..j) } else { 0.0 });
        let Ok(lattice) = Lattice::from_parameters(len[0], len[1], len[2], ang[0], ang[1], ang[2]) else {
            continue;
        };
        let mut fracs: Vec<[f64; 3]> = Vec::with_capacity(n);
        let mut tries = 0;
        while fracs.len() < n && tries < 500 {
            tries += 1;
            let f: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
            if fracs
                .iter()
                .all(|&g| min_image_distance(&lattice, f, g) >= cfg.min_separation)
            {
                fracs.push(f);
            }
        }
        if fracs.len() < n {
            continue;
        }
        let sites = elements
            .iter()
            .zip(fracs)
            .map(|(&e, f)| AtomSite::new(e, f))
            .collect::<Result<Vec<_>>>()?;
        return CrystalStructure::new(format!("syn-{seed:016x}"), lattice, sites, tags);
    }
    Err(Error::Invalid(format!(
        "could not place {n} sites with separation {} Å",
        cfg.min_separation
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crystal::io::structure_to_line;

    #[test]
    fn deterministic_per_seed() {
        let cfg = GenConfig::default();
        let a = generate_crystal(0, &cfg).unwrap();
        let b = generate_crystal(0, &cfg).unwrap();
        assert_eq!(structure_to_line(&a), structure_to_line(&b));
        assert_ne!(structure_to_line(&a), structure_to_line(&generate_crystal(1, &cfg).unwrap()));
    }

    #[test]
    fn thousand_samples_respect_bounds_and_frequencies() {
        let mut cfg = GenConfig::default();
        cfg.system_weights = [1.0, 1.0, 2.0, 1.0, 1.0, 1.0, 3.0];
        let probs = cfg.system_probabilities();
        let mut counts = [0usize; 7];
        for seed in 0..1000 {
            let s = generate_crystal(seed, &cfg).unwrap();
            assert!(s.lattice.determinant() > 0.0);
            assert!((2..=8).contains(&s.num_sites()));
            for l in s.lattice.lengths() {
                assert!((3.0 - 1e-9..=8.0 + 1e-9).contains(&l), "{l}");
            }
            counts[s.tags.crystal_system.index()] += 1;
        }
        for (c, p) in counts.iter().zip(probs) {
            let freq = *c as f64 / 1000.0;
            assert!((freq - p).abs() <= 0.05, "freq {freq} vs {p}");
        }
    }

    #[test]
    fn config_validation_names_field() {
        let mut cfg = GenConfig::default();
        cfg.element_pool = vec!["Qq".into()];
        let e = generate_crystal(0, &cfg).unwrap_err().to_string();
        assert!(e.contains("corpus.gen.element_pool"), "{e}");
    }
}
