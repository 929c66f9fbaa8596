use serde::{Deserialize, Serialize};

use super::truth::PropertyRecord;
use crate::crystal::Element;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// eV/atom, applied to both energy above hull and formation energy.
    pub max_energy: f64,
    pub min_formation_energy: f64,
    /// GPa
    pub max_modulus: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            max_energy: 0.150,
            min_formation_energy: -10.0,
            max_modulus: 1000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    EnergyTooHigh,
    NonPositiveModulus,
    ModulusOrdering,
    NobleGas,
    FormationEnergyTooLow,
    ModulusTooLarge,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::EnergyTooHigh => "energy-too-high",
            DropReason::NonPositiveModulus => "non-positive-modulus",
            DropReason::ModulusOrdering => "modulus-ordering",
            DropReason::NobleGas => "noble-gas",
            DropReason::FormationEnergyTooLow => "formation-energy-too-low",
            DropReason::ModulusTooLarge => "modulus-too-large",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", content = "reason", rename_all = "lowercase")]
pub enum FilterDecision {
    Keep,
    Drop(DropReason),
}

const MODULI: [&str; 6] = ["G_vrh", "G_voigt", "G_reuss", "K_vrh", "K_voigt", "K_reuss"];

/// Applies the rules in order and reports the first that fires. A rule
/// whose inputs are absent is skipped.
pub fn apply_filters(rec: &PropertyRecord, elements: &[Element], cfg: &FilterConfig) -> FilterDecision {
    use DropReason::*;
    let energies = ["e_above_hull", "formation_energy"];
    if energies.iter().any(|k| rec.get(k).is_some_and(|e| e > cfg.max_energy)) {
        return FilterDecision::Drop(EnergyTooHigh);
    }
    if MODULI.iter().any(|k| rec.get(k).is_some_and(|m| m <= 0.0)) {
        return FilterDecision::Drop(NonPositiveModulus);
    }
    for m in ["G", "K"] {
        let get = |s: &str| rec.get(&format!("{m}_{s}"));
        match (get("reuss"), get("vrh"), get("voigt")) {
            (Some(r), Some(h), Some(v)) => {
                if !(r < h && h < v) {
                    return FilterDecision::Drop(ModulusOrdering);
                }
            }
            _ => log::debug!("modulus ordering for {m} skipped: field absent"),
        }
    }
    if elements.iter().any(|e| e.is_noble_gas()) {
        return FilterDecision::Drop(NobleGas);
    }
    if rec.get("formation_energy").is_some_and(|e| e < cfg.min_formation_energy) {
        return FilterDecision::Drop(FormationEnergyTooLow);
    }
    if ["G_vrh", "K_vrh"].iter().any(|k| rec.get(k).is_some_and(|m| m > cfg.max_modulus)) {
        return FilterDecision::Drop(ModulusTooLarge);
    }
    FilterDecision::Keep
}
