use std::io::Write;

use serde::Serialize;

use super::truth::Property;
use super::CorpusSample;
use crate::encoders::split_words;

pub const STATS_HEADER: &str = "split,count,nodes_mean,nodes_std,tokens_mean,tokens_std,text_rate,\
E_tot_mean,E_tot_std,bandgap_mean,bandgap_std,logG_mean,logG_std,logK_mean,logK_std";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitStats {
    pub split: String,
    pub count: usize,
    pub nodes: (f64, f64),
    /// Word tokens of the description, `[CLS]` not counted.
    pub tokens: (f64, f64),
    /// Fraction of samples with a non-empty description.
    pub text_rate: f64,
    /// (mean, std) per property over samples that define it.
    pub targets: Vec<(Property, f64, f64)>,
}

/// Population mean and standard deviation; (NaN, NaN) for no data.
fn mean_std(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = v.collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

pub fn dataset_stats(split: &str, samples: &[&CorpusSample]) -> SplitStats {
    let nodes = mean_std(samples.iter().map(|s| s.structure.num_sites() as f64));
    let tokens = mean_std(samples.iter().map(|s| split_words(&s.text).len() as f64));
    let with_text = samples.iter().filter(|s| !s.text.is_empty()).count();
    let text_rate = if samples.is_empty() {
        f64::NAN
    } else {
        with_text as f64 / samples.len() as f64
    };
    let targets = Property::ALL
        .into_iter()
        .map(|p| {
            let (m, s) = mean_std(samples.iter().filter_map(|x| x.target(p)));
            (p, m, s)
        })
        .collect();
    SplitStats {
        split: split.to_string(),
        count: samples.len(),
        nodes,
        tokens,
        text_rate,
        targets,
    }
}

pub fn write_stats_csv(mut w: impl Write, rows: &[SplitStats]) -> std::io::Result<()> {
    writeln!(w, "{STATS_HEADER}")?;
    for r in rows {
        write!(
            w,
            "{},{},{},{},{},{},{}",
            r.split, r.count, r.nodes.0, r.nodes.1, r.tokens.0, r.tokens.1, r.text_rate
        )?;
        for (_, m, s) in &r.targets {
            write!(w, ",{m},{s}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}
