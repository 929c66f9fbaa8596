/// Symbols for Z = 1..=96; element id = Z − 1.
pub const SYMBOLS: [&str; 96] = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl",
    "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As",
    "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In",
    "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb",
    "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl",
    "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U", "Np", "Pu", "Am", "Cm",
];

pub const NUM_ELEMENTS: usize = SYMBOLS.len();

/// He, Ne, Ar, Kr, Xe, Rn.
pub const NOBLE_GASES: [Element; 6] = [
    Element(1),
    Element(9),
    Element(17),
    Element(35),
    Element(53),
    Element(85),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Element(u8);

impl Element {
    pub fn from_id(id: usize) -> Option<Self> {
        (id < NUM_ELEMENTS).then_some(Element(id as u8))
    }

    pub fn from_symbol(sym: &str) -> Option<Self> {
        SYMBOLS.iter().position(|&s| s == sym).map(|i| Element(i as u8))
    }

    pub fn id(self) -> usize {
        self.0 as usize
    }

    pub fn atomic_number(self) -> usize {
        self.0 as usize + 1
    }

    pub fn symbol(self) -> &'static str {
        SYMBOLS[self.0 as usize]
    }

    pub fn is_noble_gas(self) -> bool {
        NOBLE_GASES.contains(&self)
    }
}

impl std::fmt::Display for Element {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.symbol())
    }
}
