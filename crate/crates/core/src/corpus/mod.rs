//! Synthetic materials corpus: structures, descriptions, targets and the
//! filtering, splitting and summary steps applied before training.

mod describe;
mod descriptors;
mod filters;
mod generate;
mod stats;
mod tags;
mod truth;

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use describe::{describe, describe_with_dropout};
pub use descriptors::{
    extract_descriptors, extract_descriptors_lenient, raw_descriptors, DescriptorSchema, DescriptorVector, FieldKind, FieldSpec, RawDescriptors,
    RawValue, DESCRIPTOR_FIELDS,
};
pub use filters::{apply_filters, DropReason, FilterConfig, FilterDecision};
pub use generate::{generate_crystal, GenConfig};
pub use stats::{dataset_stats, write_stats_csv, SplitStats, STATS_HEADER};
pub use tags::{CrystalSystem, GlobalTags, SharingMode};
pub use truth::{
    ground_truth_property, property_record, truth_mean_inverse_distance, Coefficients, Property, PropertyRecord,
    TruthConfig, TRUTH_CUTOFF,
};

use crate::crystal::io::StructureRecord;
use crate::crystal::CrystalStructure;
use crate::error::{Error, Result};
use crate::nn::stream_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub size: usize,
    pub seed: u64,
    pub text_dropout: f64,
    pub gen: GenConfig,
    pub truth: TruthConfig,
    pub filter: FilterConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            size: 2048,
            seed: 0,
            text_dropout: 0.002,
            gen: GenConfig::default(),
            truth: TruthConfig::default(),
            filter: FilterConfig::default(),
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::config("corpus.size", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.text_dropout) {
            return Err(Error::config("corpus.text_dropout", "must be a probability"));
        }
        if !(self.truth.sigma >= 0.0) {
            return Err(Error::config("corpus.truth.sigma", "must be ≥ 0"));
        }
        if !(0.0..=1.0).contains(&self.truth.outlier_prob) {
            return Err(Error::config("corpus.truth.outlier_prob", "must be a probability"));
        }
        self.gen.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSample {
    pub structure: CrystalStructure,
    /// Empty when the description is missing.
    pub text: String,
    pub descriptors: RawDescriptors,
    pub record: PropertyRecord,
    pub filter: FilterDecision,
}

impl CorpusSample {
    pub fn kept(&self) -> bool {
        self.filter == FilterDecision::Keep
    }

    pub fn target(&self, p: Property) -> Option<f64> {
        p.extract(&self.record)
    }
}

/// One line of a corpus file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusRecord {
    #[serde(flatten)]
    pub structure: StructureRecord,
    pub text: String,
    pub descriptors: RawDescriptors,
    pub targets: std::collections::BTreeMap<String, f64>,
    pub aux: std::collections::BTreeMap<String, f64>,
    pub filter: FilterDecision,
}

impl From<&CorpusSample> for CorpusRecord {
    fn from(s: &CorpusSample) -> Self {
        Self {
            structure: StructureRecord::from(&s.structure),
            text: s.text.clone(),
            descriptors: s.descriptors.clone(),
            targets: s.record.targets.clone(),
            aux: s.record.aux.clone(),
            filter: s.filter,
        }
    }
}

impl TryFrom<CorpusRecord> for CorpusSample {
    type Error = Error;

    fn try_from(r: CorpusRecord) -> Result<Self> {
        Ok(Self {
            structure: r.structure.try_into()?,
            text: r.text,
            descriptors: r.descriptors,
            record: PropertyRecord {
                targets: r.targets,
                aux: r.aux,
            },
            filter: r.filter,
        })
    }
}

pub fn parse_corpus_line(line: &str) -> Result<CorpusSample> {
    serde_json::from_str::<CorpusRecord>(line)?.try_into()
}

pub fn corpus_to_line(s: &CorpusSample) -> String {
    serde_json::to_string(&CorpusRecord::from(s)).expect("record serializes")
}

pub fn read_corpus(reader: impl BufRead) -> Result<Vec<CorpusSample>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_corpus_line(&line).map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

pub fn write_corpus<'a>(mut w: impl Write, samples: impl IntoIterator<Item = &'a CorpusSample>) -> std::io::Result<()> {
    for s in samples {
        writeln!(w, "{}", corpus_to_line(s))?;
    }
    Ok(())
}

/// Sample `index` of the corpus seeded by `seed`. Independent of every
/// other index, so generation order does not matter.
pub fn generate_sample(cfg: &CorpusConfig, index: usize) -> Result<CorpusSample> {
    let seed = stream_seed(cfg.seed, &format!("sample/{index}"));
    let mut structure = generate_crystal(seed, &cfg.gen)?;
    structure.id = format!("syn-{index:06}");
    let text = describe_with_dropout(&structure, cfg.text_dropout, stream_seed(seed, "text"));
    let record = property_record(&structure, &cfg.truth, stream_seed(seed, "truth"))?;
    let filter = apply_filters(&record, &structure.elements(), &cfg.filter);
    Ok(CorpusSample {
        descriptors: raw_descriptors(&structure),
        structure,
        text,
        record,
        filter,
    })
}

pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Vec<CorpusSample>> {
    cfg.validate()?;
    (0..cfg.size).into_par_iter().map(|i| generate_sample(cfg, i)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle of `0..n`, cut into ⌊n·r₀/Σr⌋ train, ⌊n·r₁/Σr⌋ validation
/// and the remainder as test.
pub fn split_dataset(n: usize, ratios: [f64; 3], seed: u64) -> Result<Split> {
    if n < 3 {
        return Err(Error::Invalid(format!("need at least 3 samples to split, got {n}")));
    }
    if ratios.iter().any(|r| !(*r >= 0.0)) || ratios.iter().sum::<f64>() <= 0.0 {
        return Err(Error::config("split.ratios", "must be ≥ 0 with positive sum"));
    }
    let total: f64 = ratios.iter().sum();
    let n_train = (n as f64 * ratios[0] / total).floor() as usize;
    let n_val = (n as f64 * ratios[1] / total).floor() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    Ok(Split { train: idx, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn corpus_is_deterministic_and_round_trips() {
        let cfg = CorpusConfig {
            size: 40,
            seed: 17,
            ..Default::default()
        };
        let a = generate_corpus(&cfg).unwrap();
        let b = generate_corpus(&cfg).unwrap();
        assert_eq!(a, b);
        let mut buf = Vec::new();
        write_corpus(&mut buf, &a).unwrap();
        let back = read_corpus(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 40);
        for (x, y) in a.iter().zip(&back) {
            assert_eq!(corpus_to_line(x), corpus_to_line(y));
        }
        assert_eq!(a[3], generate_sample(&cfg, 3).unwrap());
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        let s = split_dataset(2048, [8.0, 1.0, 1.0], 0).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (1638, 204, 206));
        assert!(split_dataset(2, [8.0, 1.0, 1.0], 0).is_err());
        let t = split_dataset(3, [8.0, 1.0, 1.0], 0).unwrap();
        assert_eq!((t.train.len(), t.val.len(), t.test.len()), (2, 0, 1));
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 3usize..500, seed in any::<u64>()) {
            let s = split_dataset(n, [8.0, 1.0, 1.0], seed).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            all.sort();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert_eq!(s.train.len(), n * 8 / 10);
            prop_assert_eq!(s.val.len(), n / 10);
            prop_assert_eq!(&s, &split_dataset(n, [8.0, 1.0, 1.0], seed).unwrap());
        }
    }
}
