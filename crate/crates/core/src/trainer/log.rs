use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::SplitName;
use crate::error::{Error, Result};

pub const RUNLOG_HEADER: &str = "step,lr,loss";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub split: SplitName,
    /// `mae` for regression, `accuracy` for masked-node prediction.
    pub metric: String,
    pub value: f64,
}

/// Per-step losses, periodic evaluations and final metrics of one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    pub metrics: BTreeMap<String, f64>,
}

impl RunLog {
    pub fn push_step(&mut self, step: usize, lr: f64, loss: f64) -> Result<()> {
        if let Some(last) = self.steps.last() {
            if step <= last.step {
                return Err(Error::Invalid(format!("step {step} logged after step {}", last.step)));
            }
        }
        if !lr.is_finite() || !loss.is_finite() {
            return Err(Error::Invalid(format!("non-finite value at step {step}: lr {lr}, loss {loss}")));
        }
        self.steps.push(StepRecord { step, lr, loss });
        Ok(())
    }

    pub fn push_eval(&mut self, step: usize, split: SplitName, metric: &str, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Invalid(format!("non-finite {metric} at step {step}")));
        }
        self.evals.push(EvalRecord {
            step,
            split,
            metric: metric.to_string(),
            value,
        });
        Ok(())
    }

    /// `step,lr,loss` lines; floats use the shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(RUNLOG_HEADER);
        s.push('\n');
        for r in &self.steps {
            let _ = writeln!(s, "{},{},{}", r.step, r.lr, r.loss);
        }
        s
    }

    pub fn parse_csv(text: &str) -> Result<Vec<StepRecord>> {
        let mut lines = text.lines();
        if lines.next() != Some(RUNLOG_HEADER) {
            return Err(Error::Parse(format!("run log must start with `{RUNLOG_HEADER}`")));
        }
        lines
            .enumerate()
            .map(|(i, l)| {
                let bad = || Error::Parse(format!("run log line {}: `{l}`", i + 2));
                let mut it = l.split(',');
                let (Some(a), Some(b), Some(c), None) = (it.next(), it.next(), it.next(), it.next()) else {
                    return Err(bad());
                };
                Ok(StepRecord {
                    step: a.parse().map_err(|_| bad())?,
                    lr: b.parse().map_err(|_| bad())?,
                    loss: c.parse().map_err(|_| bad())?,
                })
            })
            .collect()
    }

    /// Evaluations and final metrics as pretty JSON.
    pub fn summary_json(&self) -> String {
        #[derive(Serialize)]
        struct Summary<'a> {
            steps: usize,
            evals: &'a [EvalRecord],
            metrics: &'a BTreeMap<String, f64>,
        }
        serde_json::to_string_pretty(&Summary {
            steps: self.steps.len(),
            evals: &self.evals,
            metrics: &self.metrics,
        })
        .expect("summary serializes")
    }

    /// Writes `runlog.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let csv = dir.join("runlog.csv");
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let json = dir.join("summary.json");
        std::fs::write(&json, self.summary_json()).map_err(|e| Error::io(&json, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steps_must_increase_and_be_finite() {
        let mut log = RunLog::default();
        log.push_step(1, 0.1, 2.0).unwrap();
        assert!(log.push_step(1, 0.1, 2.0).is_err());
        assert!(log.push_step(2, 0.1, f64::NAN).is_err());
        log.push_step(3, 1.0 / 3.0, 0.1 + 0.2).unwrap();
        let back = RunLog::parse_csv(&log.to_csv()).unwrap();
        assert_eq!(back, log.steps);
        assert!(RunLog::parse_csv("step,lr\n").is_err());
        assert!(RunLog::parse_csv("step,lr,loss\n1,2\n").is_err());
    }
}
