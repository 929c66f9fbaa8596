//! JSON-lines structure files, one structure per line:
//!
//! ```json
//! {"id": "...", "lattice": [[..],[..],[..]], "sites": [{"element": "O", "frac": [x, y, z]}], "tags": {..}}
//! ```

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{AtomSite, CrystalStructure, Element, Lattice};
use crate::corpus::GlobalTags;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteRecord {
    pub element: String,
    pub frac: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StructureRecord {
    pub id: String,
    pub lattice: [[f64; 3]; 3],
    pub sites: Vec<SiteRecord>,
    pub tags: GlobalTags,
}

impl From<&CrystalStructure> for StructureRecord {
    fn from(s: &CrystalStructure) -> Self {
        Self {
            id: s.id.clone(),
            lattice: *s.lattice.basis(),
            sites: s
                .sites()
                .iter()
                .map(|x| SiteRecord {
                    element: x.element.symbol().to_string(),
                    frac: x.frac(),
                })
                .collect(),
            tags: s.tags.clone(),
        }
    }
}

impl TryFrom<StructureRecord> for CrystalStructure {
    type Error = Error;

    fn try_from(r: StructureRecord) -> Result<Self> {
        let lattice = Lattice::new(r.lattice)?;
        let sites = r
            .sites
            .into_iter()
            .map(|s| {
                let el = Element::from_symbol(&s.element)
                    .ok_or_else(|| Error::Structure(format!("unknown element `{}`", s.element)))?;
                AtomSite::new(el, s.frac)
            })
            .collect::<Result<Vec<_>>>()?;
        CrystalStructure::new(r.id, lattice, sites, r.tags)
    }
}

pub fn parse_structure_line(line: &str) -> Result<CrystalStructure> {
    let rec: StructureRecord = serde_json::from_str(line)?;
    rec.try_into()
}

pub fn structure_to_line(s: &CrystalStructure) -> String {
    serde_json::to_string(&StructureRecord::from(s)).expect("structure serializes")
}

/// Reads every non-blank line; errors carry the 1-based line number.
pub fn read_structures(reader: impl BufRead) -> Result<Vec<CrystalStructure>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            parse_structure_line(&line).map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

pub fn write_structures<'a>(
    mut w: impl Write,
    structures: impl IntoIterator<Item = &'a CrystalStructure>,
) -> std::io::Result<()> {
    for s in structures {
        writeln!(w, "{}", structure_to_line(s))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: &str = r#"{"id":"mp-1","lattice":[[4,0,0],[0,4,0],[0,0,4]],"sites":[{"element":"Al","frac":[0,0,0]},{"element":"Te","frac":[0.5,0.5,1.5]}],"tags":{"crystal_system":"cubic","space_group_label":"Pm-3m","sharing_mode":{"edge_sharing":false,"corner_sharing":true,"face_sharing":false},"bond_range":[2.5,3.0]}}"#;

    #[test]
    fn parses_contract_fields() {
        let s = parse_structure_line(LINE).unwrap();
        assert_eq!(s.id, "mp-1");
        assert_eq!(s.num_sites(), 2);
        assert_eq!(s.sites()[1].frac(), [0.5, 0.5, 0.5]);
        assert!(s.tags.sharing_mode.corner_sharing);
        let again = parse_structure_line(&structure_to_line(&s)).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn rejects_invalid_input() {
        assert!(parse_structure_line(&LINE.replace("\"Te\"", "\"Zz\"")).is_err());
        assert!(parse_structure_line(&LINE.replace("[0,0,4]", "[0,0,-4]")).is_err());
        assert!(parse_structure_line(&LINE.replace("[2.5,3.0]", "[3.0,2.5]")).is_err());
        assert!(parse_structure_line("{}").is_err());
        assert!(parse_structure_line("").is_err());
    }

    #[test]
    fn reader_reports_line_numbers() {
        let text = format!("{LINE}\n\n{{\"id\":1}}\n");
        let err = read_structures(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }
}
