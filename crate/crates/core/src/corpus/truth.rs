use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::crystal::{build_periodic_graph, CrystalStructure, Element, RbfSpec};
use crate::error::{Error, Result};
use crate::nn::stream_seed;

/// Neighbour cutoff used by the local term, independent of model config.
pub const TRUTH_CUTOFF: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Property {
    #[serde(rename = "E_tot")]
    ETot,
    #[serde(rename = "bandgap")]
    Bandgap,
    #[serde(rename = "logG")]
    LogG,
    #[serde(rename = "logK")]
    LogK,
}

impl Property {
    pub const ALL: [Property; 4] = [Property::ETot, Property::Bandgap, Property::LogG, Property::LogK];

    pub fn name(self) -> &'static str {
        match self {
            Property::ETot => "E_tot",
            Property::Bandgap => "bandgap",
            Property::LogG => "logG",
            Property::LogK => "logK",
        }
    }

    /// Value in the regression space, read from a stored record.
    pub fn extract(self, rec: &PropertyRecord) -> Option<f64> {
        match self {
            Property::ETot => rec.targets.get("E_tot").copied(),
            Property::Bandgap => rec.targets.get("bandgap").copied(),
            Property::LogG => rec.targets.get("G_vrh").copied().filter(|v| *v > 0.0).map(|v| v.log10()),
            Property::LogK => rec.targets.get("K_vrh").copied().filter(|v| *v > 0.0).map(|v| v.log10()),
        }
    }
}

impl std::fmt::Display for Property {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Property {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Property::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown property `{s}`")))
    }
}

/// Coefficients of `f_local + f_global` for one property.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub offset: f64,
    pub element_amp: f64,
    pub element_phase: f64,
    pub inverse_distance: f64,
    pub system: [f64; 7],
    /// edge, corner, face
    pub sharing: [f64; 3],
}

impl Coefficients {
    pub fn for_property(p: Property) -> Self {
        match p {
            Property::ETot => Self {
                offset: -5.0,
                element_amp: 2.0,
                element_phase: 0.3,
                inverse_distance: -4.0,
                system: [-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0],
                sharing: [0.8, -0.5, 0.3],
            },
            Property::Bandgap => Self {
                offset: 3.0,
                element_amp: 0.8,
                element_phase: 1.1,
                inverse_distance: 1.0,
                system: [1.0, -0.6, 0.2, -1.0, 0.6, -0.2, 0.0],
                sharing: [-0.3, 0.4, 0.2],
            },
            Property::LogG => Self {
                offset: 1.4,
                element_amp: 0.15,
                element_phase: 2.0,
                inverse_distance: 0.5,
                system: [-0.3, -0.2, -0.1, 0.0, 0.1, 0.2, 0.3],
                sharing: [0.08, -0.05, 0.03],
            },
            Property::LogK => Self {
                offset: 1.8,
                element_amp: 0.15,
                element_phase: 0.7,
                inverse_distance: 0.4,
                system: [0.3, -0.3, 0.2, -0.2, 0.1, -0.1, 0.0],
                sharing: [-0.05, 0.08, 0.04],
            },
        }
    }

    /// Per-element contribution, smooth in atomic number.
    pub fn element(&self, e: Element) -> f64 {
        self.element_amp * (0.7 * e.atomic_number() as f64 + self.element_phase).sin()
    }

    pub fn local(&self, s: &CrystalStructure, mean_inverse_distance: f64) -> f64 {
        let n = s.num_sites() as f64;
        let elem: f64 = s.sites().iter().map(|x| self.element(x.element)).sum::<f64>() / n;
        self.offset + elem + self.inverse_distance * mean_inverse_distance
    }

    pub fn global(&self, s: &CrystalStructure) -> f64 {
        let t = &s.tags;
        let m = t.sharing_mode;
        let flags = [m.edge_sharing, m.corner_sharing, m.face_sharing];
        self.system[t.crystal_system.index()]
            + flags
                .iter()
                .zip(self.sharing)
                .map(|(f, c)| if *f { c } else { 0.0 })
                .sum::<f64>()
    }
}

pub fn truth_mean_inverse_distance(s: &CrystalStructure) -> Result<f64> {
    let rbf = RbfSpec::uniform(TRUTH_CUTOFF, 2)?;
    Ok(build_periodic_graph(s, TRUTH_CUTOFF, &rbf)?.mean_inverse_distance())
}

/// `f_local + f_global + σ·ε` with ε drawn from `noise_seed`.
pub fn ground_truth_property(s: &CrystalStructure, p: Property, sigma: f64, noise_seed: u64) -> Result<f64> {
    let c = Coefficients::for_property(p);
    let mid = truth_mean_inverse_distance(s)?;
    let eps: f64 = ChaCha8Rng::seed_from_u64(noise_seed).sample(StandardNormal);
    Ok(c.local(s, mid) + c.global(s) + sigma * eps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthConfig {
    pub sigma: f64,
    /// Chance a record gets one field pushed outside the filter limits.
    pub outlier_prob: f64,
}

impl Default for TruthConfig {
    fn default() -> Self {
        Self {
            sigma: 0.05,
            outlier_prob: 0.03,
        }
    }
}

/// Target and auxiliary fields of one material. Absent keys mean the value
/// is unknown.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PropertyRecord {
    pub targets: BTreeMap<String, f64>,
    pub aux: BTreeMap<String, f64>,
}

impl PropertyRecord {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.targets.get(key).or_else(|| self.aux.get(key)).copied()
    }
}

pub fn property_record(s: &CrystalStructure, cfg: &TruthConfig, seed: u64) -> Result<PropertyRecord> {
    let mut t = BTreeMap::new();
    let mut vals = [0.0; 4];
    for (k, p) in Property::ALL.into_iter().enumerate() {
        vals[k] = ground_truth_property(s, p, cfg.sigma, stream_seed(seed, p.name()))?;
    }
    let g = 10f64.powf(vals[2]);
    let k = 10f64.powf(vals[3]);
    t.insert("E_tot".into(), vals[0]);
    t.insert("bandgap".into(), vals[1].max(0.0));
    t.insert("G_vrh".into(), g);
    t.insert("K_vrh".into(), k);

    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, "aux"));
    let mut a = BTreeMap::new();
    let spread_g: f64 = rng.gen_range(0.02..0.2);
    let spread_k: f64 = rng.gen_range(0.02..0.2);
    a.insert("G_voigt".into(), g * (1.0 + spread_g));
    a.insert("G_reuss".into(), g * (1.0 - spread_g));
    a.insert("K_voigt".into(), k * (1.0 + spread_k));
    a.insert("K_reuss".into(), k * (1.0 - spread_k));
    a.insert("e_above_hull".into(), rng.gen_range(0.0..0.1));
    a.insert("formation_energy".into(), rng.gen_range(-4.0..0.0));
    let mut rec = PropertyRecord { targets: t, aux: a };

    if rng.gen_bool(cfg.outlier_prob) {
        match rng.gen_range(0..5) {
            0 => {
                rec.aux.insert("e_above_hull".into(), rng.gen_range(0.2..0.6));
            }
            1 => {
                rec.aux.insert("G_reuss".into(), -1.0);
            }
            2 => {
                rec.aux.insert("K_reuss".into(), k * 1.1);
            }
            3 => {
                rec.aux.insert("formation_energy".into(), rng.gen_range(-15.0..-10.5));
            }
            _ => {
                rec.targets.insert("G_vrh".into(), 1500.0);
                rec.aux.insert("G_voigt".into(), 1600.0);
                rec.aux.insert("G_reuss".into(), 1400.0);
            }
        }
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_crystal, GenConfig};
    use crate::crystal::tests::structure;
    use crate::crystal::Lattice;

    #[test]
    fn noiseless_value_is_sum_of_terms() {
        let s = structure(Lattice::cubic(3.5).unwrap(), &[("Na", [0.0; 3]), ("Cl", [0.5; 3])]);
        let v = ground_truth_property(&s, Property::ETot, 0.0, 7).unwrap();
        let c = Coefficients::for_property(Property::ETot);
        let mid = truth_mean_inverse_distance(&s).unwrap();
        assert!(mid > 0.0);
        // example tags: orthorhombic, edge sharing
        let expect = c.offset
            + (c.element(Element::from_symbol("Na").unwrap()) + c.element(Element::from_symbol("Cl").unwrap())) / 2.0
            + c.inverse_distance * mid
            + c.system[2]
            + c.sharing[0];
        assert!((v - expect).abs() < 1e-12);
    }

    #[test]
    fn noise_scales_with_sigma() {
        let s = generate_crystal(3, &GenConfig::default()).unwrap();
        let a = ground_truth_property(&s, Property::LogG, 0.0, 11).unwrap();
        let b = ground_truth_property(&s, Property::LogG, 0.1, 11).unwrap();
        let c = ground_truth_property(&s, Property::LogG, 0.2, 11).unwrap();
        assert!(((c - a) - 2.0 * (b - a)).abs() < 1e-12);
    }

    #[test]
    fn records_round_trip_and_extract() {
        let s = generate_crystal(5, &GenConfig::default()).unwrap();
        let r = property_record(&s, &TruthConfig { sigma: 0.0, outlier_prob: 0.0 }, 9).unwrap();
        let g = Property::LogG.extract(&r).unwrap();
        let direct = ground_truth_property(&s, Property::LogG, 0.0, 0).unwrap();
        assert!((g - direct).abs() < 1e-12);
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<PropertyRecord>(&json).unwrap(), r);
        assert!(r.get("G_reuss").unwrap() < r.get("G_vrh").unwrap());
    }

    #[test]
    fn property_names_parse() {
        for p in Property::ALL {
            assert_eq!(p.name().parse::<Property>().unwrap(), p);
        }
        assert!("logX".parse::<Property>().is_err());
    }
}
