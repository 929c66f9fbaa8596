//! Run configuration: a TOML document with one section per stage, plus
//! `section.key=value` overrides applied on top.

use serde::{Deserialize, Serialize};

use crate::analysis::SimilarityOptions;
use crate::corpus::{CorpusConfig, Property};
use crate::error::{Error, Result};
use crate::fusion::ModelConfig;
use crate::trainer::{DataConfig, Task, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub seeds: Vec<u64>,
    pub properties: Vec<Property>,
    /// Rows of the comparison table; all eight when empty.
    pub rows: Vec<String>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            properties: Property::ALL.to_vec(),
            rows: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub contrastive: TrainConfig,
    pub finetune: TrainConfig,
    pub analysis: SimilarityOptions,
    pub compare: CompareConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusConfig::default(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            pretrain: TrainConfig::default(),
            contrastive: TrainConfig {
                task: Task::Contrastive,
                ..Default::default()
            },
            finetune: TrainConfig {
                task: Task::Regression(Property::ETot),
                ..Default::default()
            },
            analysis: SimilarityOptions::default(),
            compare: CompareConfig::default(),
        }
    }
}

/// One `dotted.path=value` override. The value is read as a TOML value
/// when possible and as a bare string otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub path: Vec<String>,
    pub value: toml::Value,
}

impl std::str::FromStr for Override {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (key, raw) = s
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("override `{s}` is not of the form key=value")))?;
        let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
        if path.iter().any(|p| p.is_empty()) {
            return Err(Error::Parse(format!("override key `{key}` has an empty segment")));
        }
        let raw = raw.trim();
        let value = match format!("v = {raw}").parse::<toml::Table>() {
            Ok(mut t) => t.remove("v").expect("key present"),
            Err(_) => toml::Value::String(raw.to_string()),
        };
        Ok(Self { path, value })
    }
}

impl std::fmt::Display for Override {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}={}", self.path.join("."), self.value)
    }
}

fn apply(doc: &mut toml::Table, o: &Override) -> Result<()> {
    let (last, parents) = o.path.split_last().expect("non-empty path");
    let mut table = doc;
    for (i, seg) in parents.iter().enumerate() {
        let entry = table
            .entry(seg.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| {
            Error::config(o.path[..=i].join("."), "is a value, not a section")
        })?;
    }
    table.insert(last.clone(), o.value.clone());
    Ok(())
}

impl RunConfig {
    /// Parses `text`, applies `overrides` in order and validates the result.
    pub fn load(text: &str, overrides: &[Override]) -> Result<Self> {
        let mut doc: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Parse(format!("config: {}", e.message())))?;
        for o in overrides {
            apply(&mut doc, o)?;
        }
        // a section that leaves out `task` keeps the task its role implies
        let defaults = RunConfig::default();
        for (name, section) in [("pretrain", &defaults.pretrain), ("contrastive", &defaults.contrastive), ("finetune", &defaults.finetune)] {
            if let Some(toml::Value::Table(t)) = doc.get_mut(name) {
                t.entry("task").or_insert_with(|| toml::Value::String(section.task.to_string()));
            }
        }
        let cfg: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(doc)).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.data.validate()?;
        self.model.validate()?;
        self.pretrain.validate_in("pretrain")?;
        self.contrastive.validate_in("contrastive")?;
        self.finetune.validate_in("finetune")?;
        if self.pretrain.task != Task::Mnp {
            return Err(Error::config("pretrain.task", "must be `mnp`"));
        }
        if self.contrastive.task != Task::Contrastive {
            return Err(Error::config("contrastive.task", "must be `contrastive`"));
        }
        if !matches!(self.finetune.task, Task::Regression(_)) {
            return Err(Error::config("finetune.task", "must be `regression:<property>`"));
        }
        if self.compare.seeds.is_empty() {
            return Err(Error::config("compare.seeds", "needs at least one seed"));
        }
        if self.compare.properties.is_empty() {
            return Err(Error::config("compare.properties", "needs at least one property"));
        }
        Ok(())
    }

    /// TOML text that [`RunConfig::load`] maps back to `self`.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
