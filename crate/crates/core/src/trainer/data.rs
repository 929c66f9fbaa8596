use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    extract_descriptors_lenient, split_dataset, CorpusSample, DescriptorSchema, Property, PropertyRecord, Split,
};
use crate::crystal::build_periodic_graph;
use crate::encoders::Vocab;
use crate::error::{Error, Result};
use crate::fusion::{ModelConfig, ModelInput};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub split_ratios: [f64; 3],
    /// Kept separate from the training seed so that every training seed
    /// sees the same partition.
    pub split_seed: u64,
    pub min_freq: usize,
    /// Descriptor columns undefined in more than this fraction of the
    /// training rows are dropped.
    pub max_undefined: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            split_ratios: [8.0, 1.0, 1.0],
            split_seed: 0,
            min_freq: 2,
            max_undefined: 0.5,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.split_ratios.iter().any(|r| !(*r >= 0.0)) || !(self.split_ratios[0] > 0.0) {
            return Err(Error::config("data.split_ratios", "must be ≥ 0 with a positive training share"));
        }
        if !(0.0..=1.0).contains(&self.max_undefined) {
            return Err(Error::config("data.max_undefined", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            _ => Err(Error::Parse(format!("unknown split `{s}` (train, val or test)"))),
        }
    }
}

/// Filtered corpus turned into model inputs, with the vocabulary and
/// descriptor schema frozen on its training split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocab,
    pub schema: Arc<DescriptorSchema>,
    pub inputs: Vec<ModelInput>,
    pub records: Vec<PropertyRecord>,
    pub split: Split,
}

impl Dataset {
    /// Keeps samples that passed the filters, splits them and fits the
    /// vocabulary and descriptor schema on the training part.
    pub fn prepare(samples: &[CorpusSample], model: &ModelConfig, cfg: &DataConfig) -> Result<Self> {
        Self::build(samples, model, cfg, None)
    }

    /// As [`Dataset::prepare`] but reuses a frozen vocabulary and schema,
    /// e.g. those saved next to a checkpoint.
    pub fn with_frozen(
        samples: &[CorpusSample],
        model: &ModelConfig,
        cfg: &DataConfig,
        vocab: Vocab,
        schema: Arc<DescriptorSchema>,
    ) -> Result<Self> {
        Self::build(samples, model, cfg, Some((vocab, schema)))
    }

    fn build(
        samples: &[CorpusSample],
        model: &ModelConfig,
        cfg: &DataConfig,
        frozen: Option<(Vocab, Arc<DescriptorSchema>)>,
    ) -> Result<Self> {
        cfg.validate()?;
        model.validate()?;
        let kept: Vec<&CorpusSample> = samples.iter().filter(|s| s.kept()).collect();
        if kept.is_empty() {
            return Err(Error::Invalid("corpus has no samples that pass the filters".into()));
        }
        let split = split_dataset(kept.len(), cfg.split_ratios, cfg.split_seed)?;
        let (vocab, schema) = match frozen {
            Some(f) => f,
            None => {
                let vocab = Vocab::build(split.train.iter().map(|&i| kept[i].text.as_str()), cfg.min_freq);
                let raw: Vec<_> = split.train.iter().map(|&i| kept[i].descriptors.clone()).collect();
                (vocab, Arc::new(DescriptorSchema::fit(&raw, cfg.max_undefined)?))
            }
        };
        let rbf = model.structure.rbf();
        let cutoff = model.structure.cutoff;
        let max_len = model.text.max_len;
        let built = kept
            .par_iter()
            .map(|s| {
                let (desc, unseen) = extract_descriptors_lenient(&s.descriptors, &schema)?;
                let input = ModelInput {
                    id: s.structure.id.clone(),
                    graph: build_periodic_graph(&s.structure, cutoff, &rbf)?,
                    tokens: vocab.encode(&s.text, max_len),
                    descriptors: desc.standardized(),
                };
                Ok((input, unseen))
            })
            .collect::<Result<Vec<_>>>()?;
        let unseen: usize = built.iter().map(|b| b.1).sum();
        if unseen > 0 {
            log::warn!("{unseen} categorical descriptor labels unseen in training were filled with the training mode");
        }
        let inputs = built.into_iter().map(|b| b.0).collect();
        Ok(Self {
            vocab,
            schema,
            inputs,
            records: kept.iter().map(|s| s.record.clone()).collect(),
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn indices(&self, which: SplitName) -> &[usize] {
        match which {
            SplitName::Train => &self.split.train,
            SplitName::Val => &self.split.val,
            SplitName::Test => &self.split.test,
        }
    }

    /// Targets of `p` for the given rows (log10 space for the moduli).
    pub fn targets(&self, p: Property, idx: &[usize]) -> Result<Vec<f64>> {
        idx.iter()
            .map(|&i| {
                p.extract(&self.records[i]).ok_or_else(|| {
                    Error::Invalid(format!("property {p} absent for sample {}", self.inputs[i].id))
                })
            })
            .collect()
    }
}
