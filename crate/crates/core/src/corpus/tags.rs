use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrystalSystem {
    Triclinic,
    Monoclinic,
    Orthorhombic,
    Tetragonal,
    Trigonal,
    Hexagonal,
    Cubic,
}

impl CrystalSystem {
    pub const ALL: [CrystalSystem; 7] = [
        CrystalSystem::Triclinic,
        CrystalSystem::Monoclinic,
        CrystalSystem::Orthorhombic,
        CrystalSystem::Tetragonal,
        CrystalSystem::Trigonal,
        CrystalSystem::Hexagonal,
        CrystalSystem::Cubic,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            CrystalSystem::Triclinic => "triclinic",
            CrystalSystem::Monoclinic => "monoclinic",
            CrystalSystem::Orthorhombic => "orthorhombic",
            CrystalSystem::Tetragonal => "tetragonal",
            CrystalSystem::Trigonal => "trigonal",
            CrystalSystem::Hexagonal => "hexagonal",
            CrystalSystem::Cubic => "cubic",
        }
    }

    /// Representative space-group symbols for this system.
    pub fn space_groups(self) -> &'static [&'static str] {
        match self {
            CrystalSystem::Triclinic => &["P1", "P-1"],
            CrystalSystem::Monoclinic => &["P2_1/c", "C2/m", "C2/c"],
            CrystalSystem::Orthorhombic => &["Pbcn", "Pnma", "Cmcm"],
            CrystalSystem::Tetragonal => &["I4/mmm", "P4/nmm", "I4_1/amd"],
            CrystalSystem::Trigonal => &["R-3m", "P-3m1", "R3c"],
            CrystalSystem::Hexagonal => &["P6_3/mmc", "P6/mmm", "P6_3mc"],
            CrystalSystem::Cubic => &["Fm-3m", "Pm-3m", "Fd-3m", "Im-3m"],
        }
    }
}

impl std::str::FromStr for CrystalSystem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CrystalSystem::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown crystal system `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharingMode {
    pub edge_sharing: bool,
    pub corner_sharing: bool,
    pub face_sharing: bool,
}

/// Structure-level descriptors that a local graph does not see directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalTags {
    pub crystal_system: CrystalSystem,
    pub space_group_label: String,
    pub sharing_mode: SharingMode,
    /// (min, max) bond length in Å.
    pub bond_range: (f64, f64),
    /// Often undefined; exercises the descriptor NaN-column policy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub octahedral_tilt: Option<f64>,
}

impl GlobalTags {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.bond_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Structure(format!(
                "bond range ({lo}, {hi}) must satisfy 0 < min ≤ max"
            )));
        }
        if self.octahedral_tilt.is_some_and(|t| !t.is_finite()) {
            return Err(Error::Structure("octahedral tilt is not finite".into()));
        }
        Ok(())
    }

    pub fn example() -> Self {
        Self {
            crystal_system: CrystalSystem::Orthorhombic,
            space_group_label: "Pbcn".into(),
            sharing_mode: SharingMode {
                edge_sharing: true,
                ..Default::default()
            },
            bond_range: (2.14, 2.24),
            octahedral_tilt: None,
        }
    }
}
