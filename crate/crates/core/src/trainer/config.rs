use serde::{Deserialize, Serialize};

use crate::corpus::Property;
use crate::error::{Error, Result};

/// Environment variable that overrides [`TrainConfig::precision`].
pub const PRECISION_ENV: &str = "CAST_PRECISION";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Task {
    Mnp,
    Regression(Property),
    Contrastive,
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnp" => Ok(Task::Mnp),
            "contrastive" => Ok(Task::Contrastive),
            _ => match s.strip_prefix("regression:") {
                Some(p) => Ok(Task::Regression(p.parse()?)),
                None => Err(Error::Parse(format!(
                    "unknown task `{s}` (expected mnp, contrastive or regression:<property>)"
                ))),
            },
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Task::Mnp => f.write_str("mnp"),
            Task::Contrastive => f.write_str("contrastive"),
            Task::Regression(p) => write!(f, "regression:{p}"),
        }
    }
}

impl TryFrom<String> for Task {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Task> for String {
    fn from(t: Task) -> String {
        t.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F64,
    F32,
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f64" | "double" => Ok(Precision::F64),
            "f32" | "single" => Ok(Precision::F32),
            other => Err(Error::Parse(format!("unknown precision `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub task: Task,
    pub mask_ratio: f64,
    /// Defaults to 64, or 360 for the contrastive task.
    pub batch_size: Option<usize>,
    pub warmup_steps: usize,
    pub peak_lr: f64,
    /// Length of one cosine cycle after warm-up; defaults to
    /// `total_steps - warmup_steps`.
    pub cosine_period: Option<usize>,
    pub total_steps: usize,
    pub seed: u64,
    pub freeze_text: bool,
    /// Load `text.*` from a contrastive checkpoint when fine-tuning.
    pub transfer_text: bool,
    pub precision: Precision,
    pub eval_interval: usize,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            task: Task::Mnp,
            mask_ratio: 0.5,
            batch_size: None,
            warmup_steps: 1000,
            peak_lr: 3e-4,
            cosine_period: None,
            total_steps: 20_000,
            seed: 0,
            freeze_text: false,
            transfer_text: false,
            precision: Precision::F64,
            eval_interval: 500,
            weight_decay: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn batch_size(&self) -> usize {
        self.batch_size.unwrap_or(match self.task {
            Task::Contrastive => 360,
            _ => 64,
        })
    }

    pub fn period(&self) -> usize {
        self.cosine_period
            .unwrap_or_else(|| self.total_steps.saturating_sub(self.warmup_steps))
            .max(1)
    }

    /// Config precision unless `CAST_PRECISION` is set.
    pub fn resolved_precision(&self) -> Result<Precision> {
        match std::env::var(PRECISION_ENV) {
            Ok(v) if !v.trim().is_empty() => v
                .parse()
                .map_err(|_| Error::config(PRECISION_ENV, format!("unknown precision `{v}`"))),
            _ => Ok(self.precision),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_in("train")
    }

    /// Validation with errors naming fields under `section`.
    pub fn validate_in(&self, section: &str) -> Result<()> {
        let field = |f: &str| format!("{section}.{f}");
        if self.task == Task::Mnp && !(self.mask_ratio > 0.0 && self.mask_ratio <= 1.0) {
            return Err(Error::config(field("mask_ratio"), "must lie in (0, 1]"));
        }
        let b = self.batch_size();
        if b == 0 {
            return Err(Error::config(field("batch_size"), "must be ≥ 1"));
        }
        if self.task == Task::Contrastive && b < 2 {
            return Err(Error::config(field("batch_size"), "contrastive batches need ≥ 2 samples"));
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return Err(Error::config(field("peak_lr"), "must be > 0"));
        }
        if self.cosine_period == Some(0) {
            return Err(Error::config(field("cosine_period"), "must be ≥ 1"));
        }
        if self.total_steps == 0 {
            return Err(Error::config(field("total_steps"), "must be ≥ 1"));
        }
        if self.eval_interval == 0 {
            return Err(Error::config(field("eval_interval"), "must be ≥ 1"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config(field("weight_decay"), "must be ≥ 0"));
        }
        Ok(())
    }
}
