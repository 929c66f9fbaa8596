use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::crystal::CrystalStructure;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawValue {
    Bool(bool),
    Num(f64),
    Cat(String),
}

/// Field name to value; `None` marks an undefined entry.
pub type RawDescriptors = BTreeMap<String, Option<RawValue>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Numerical,
    Categorical,
    Boolean,
}

pub const DESCRIPTOR_FIELDS: [(&str, FieldKind); 8] = [
    ("bond_max", FieldKind::Numerical),
    ("bond_min", FieldKind::Numerical),
    ("corner_sharing", FieldKind::Boolean),
    ("crystal_system", FieldKind::Categorical),
    ("edge_sharing", FieldKind::Boolean),
    ("face_sharing", FieldKind::Boolean),
    ("octahedral_tilt", FieldKind::Numerical),
    ("space_group", FieldKind::Categorical),
];

pub fn raw_descriptors(s: &CrystalStructure) -> RawDescriptors {
    let t = &s.tags;
    let m = t.sharing_mode;
    let mut d = RawDescriptors::new();
    d.insert("bond_max".into(), Some(RawValue::Num(t.bond_range.1)));
    d.insert("bond_min".into(), Some(RawValue::Num(t.bond_range.0)));
    d.insert("corner_sharing".into(), Some(RawValue::Bool(m.corner_sharing)));
    d.insert("crystal_system".into(), Some(RawValue::Cat(t.crystal_system.name().into())));
    d.insert("edge_sharing".into(), Some(RawValue::Bool(m.edge_sharing)));
    d.insert("face_sharing".into(), Some(RawValue::Bool(m.face_sharing)));
    d.insert("octahedral_tilt".into(), t.octahedral_tilt.map(RawValue::Num));
    d.insert("space_group".into(), Some(RawValue::Cat(t.space_group_label.clone())));
    d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
    /// Sorted labels; a label's ordinal is its index.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
    /// Encoded value used when the entry is undefined.
    pub fill: f64,
    pub mean: f64,
    pub std: f64,
}

/// Column layout frozen on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorSchema {
    pub fields: Vec<FieldSpec>,
    pub dropped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorVector {
    pub values: Vec<f64>,
    pub schema: Arc<DescriptorSchema>,
}

impl DescriptorVector {
    /// Values shifted and scaled by the training mean and std.
    pub fn standardized(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.schema.fields)
            .map(|(v, f)| (v - f.mean) / f.std)
            .collect()
    }
}

fn kind_matches(kind: FieldKind, v: &RawValue) -> bool {
    matches!(
        (kind, v),
        (FieldKind::Numerical, RawValue::Num(_))
            | (FieldKind::Boolean, RawValue::Bool(_))
            | (FieldKind::Categorical, RawValue::Cat(_))
    )
}

fn lookup<'a>(raw: &'a RawDescriptors, name: &str, kind: FieldKind) -> Result<Option<&'a RawValue>> {
    match raw.get(name).and_then(|v| v.as_ref()) {
        None => Ok(None),
        Some(v) if kind_matches(kind, v) => Ok(Some(v)),
        Some(v) => Err(Error::Schema(format!("field `{name}`: expected {kind:?}, got {v:?}"))),
    }
}

impl DescriptorSchema {
    /// Builds the schema from training rows. Fields undefined in more than
    /// `max_undefined` of the rows are dropped.
    pub fn fit(train: &[RawDescriptors], max_undefined: f64) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Schema("cannot fit descriptors on an empty split".into()));
        }
        let mut fields = Vec::new();
        let mut dropped = Vec::new();
        for (name, kind) in DESCRIPTOR_FIELDS {
            let mut defined = Vec::new();
            for row in train {
                if let Some(v) = lookup(row, name, kind)? {
                    defined.push(v);
                }
            }
            let undefined = 1.0 - defined.len() as f64 / train.len() as f64;
            if defined.is_empty() || undefined > max_undefined {
                dropped.push(name.to_string());
                continue;
            }
            let mut categories: Vec<String> = Vec::new();
            if kind == FieldKind::Categorical {
                for v in &defined {
                    if let RawValue::Cat(c) = v {
                        categories.push(c.clone());
                    }
                }
                categories.sort();
                categories.dedup();
            }
            let mut spec = FieldSpec {
                name: name.to_string(),
                kind,
                categories,
                fill: 0.0,
                mean: 0.0,
                std: 1.0,
            };
            let enc: Vec<f64> = defined.iter().map(|v| spec.encode(v)).collect::<Result<_>>()?;
            let mean = enc.iter().sum::<f64>() / enc.len() as f64;
            spec.fill = if kind == FieldKind::Categorical {
                mode(&enc)
            } else {
                mean
            };
            let var = enc.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / enc.len() as f64;
            spec.mean = mean;
            spec.std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
            fields.push(spec);
        }
        Ok(Self { fields, dropped })
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn decode(&self, field: &str, value: f64) -> Result<String> {
        let f = self
            .fields
            .iter()
            .find(|f| f.name == field)
            .ok_or_else(|| Error::Schema(format!("no field `{field}`")))?;
        match f.kind {
            FieldKind::Categorical => {
                let i = value.round();
                if i < 0.0 || i as usize >= f.categories.len() || (value - i).abs() > 1e-9 {
                    return Err(Error::Schema(format!("`{value}` is not an ordinal of `{field}`")));
                }
                Ok(f.categories[i as usize].clone())
            }
            FieldKind::Boolean => Ok((value != 0.0).to_string()),
            FieldKind::Numerical => Ok(value.to_string()),
        }
    }
}

fn mode(v: &[f64]) -> f64 {
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for x in v {
        *counts.entry(*x as i64).or_default() += 1;
    }
    // ties go to the lowest ordinal
    let best = counts.values().copied().max().unwrap_or(0);
    counts.into_iter().find(|(_, c)| *c == best).map_or(0.0, |(k, _)| k as f64)
}

impl FieldSpec {
    fn encode(&self, v: &RawValue) -> Result<f64> {
        match v {
            RawValue::Num(x) if x.is_finite() => Ok(*x),
            RawValue::Num(x) => Err(Error::Schema(format!("field `{}`: non-finite {x}", self.name))),
            RawValue::Bool(b) => Ok(if *b { 1.0 } else { 0.0 }),
            RawValue::Cat(c) => self
                .categories
                .binary_search(c)
                .map(|i| i as f64)
                .map_err(|_| Error::Schema(format!("field `{}`: unknown label `{c}`", self.name))),
        }
    }
}

/// Encodes one row under a frozen schema. Undefined entries take the
/// training fill value; unseen labels are an error.
pub fn extract_descriptors(raw: &RawDescriptors, schema: &Arc<DescriptorSchema>) -> Result<DescriptorVector> {
    let values = schema
        .fields
        .iter()
        .map(|f| match lookup(raw, &f.name, f.kind)? {
            Some(v) => f.encode(v),
            None => Ok(f.fill),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DescriptorVector {
        values,
        schema: Arc::clone(schema),
    })
}

/// Like [`extract_descriptors`], except that a categorical label missing
/// from the schema is treated as undefined and gets the field's fill value.
/// Returns the vector and the number of labels replaced this way.
pub fn extract_descriptors_lenient(
    raw: &RawDescriptors,
    schema: &Arc<DescriptorSchema>,
) -> Result<(DescriptorVector, usize)> {
    let mut unseen = 0;
    let values = schema
        .fields
        .iter()
        .map(|f| match lookup(raw, &f.name, f.kind)? {
            Some(RawValue::Cat(c)) if f.categories.binary_search(c).is_err() => {
                unseen += 1;
                Ok(f.fill)
            }
            Some(v) => f.encode(v),
            None => Ok(f.fill),
        })
        .collect::<Result<Vec<_>>>()?;
    let v = DescriptorVector {
        values,
        schema: Arc::clone(schema),
    };
    Ok((v, unseen))
}
