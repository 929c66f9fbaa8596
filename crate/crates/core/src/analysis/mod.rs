//! Attention-map extraction and the distribution of pairwise cosine
//! similarities between node attention rows.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoders::Vocab;
use crate::error::{Error, Result};
use crate::fusion::{AttentionMap, AttentionRecord, ModelInput, Variant};
use crate::nn::{Graph, Tensor};
use crate::trainer::{Dataset, Trained};

pub const NUM_BINS: usize = 50;
pub const HISTOGRAM_HEADER: [&str; 4] = ["layer", "bin_lo", "bin_hi", "count"];
pub const ATTENTION_HEADER: [&str; 6] = ["layer", "head", "node", "token_index", "token", "weight"];

/// Attention maps of one sample, rows indexed by node and columns by token.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleAttention {
    pub sample_id: String,
    pub tokens: Vec<String>,
    pub maps: Vec<AttentionMap>,
}

impl SampleAttention {
    pub fn to_records(&self) -> Vec<AttentionRecord> {
        self.maps
            .iter()
            .map(|m| AttentionRecord {
                sample_id: self.sample_id.clone(),
                layer: m.layer,
                head: m.head,
                tokens: self.tokens.clone(),
                weights: m.weights.clone(),
            })
            .collect()
    }

    pub fn from_records(records: &[AttentionRecord]) -> Vec<SampleAttention> {
        let mut out: Vec<SampleAttention> = Vec::new();
        for r in records {
            let map = AttentionMap {
                layer: r.layer,
                head: r.head,
                weights: r.weights.clone(),
            };
            match out.last_mut() {
                Some(s) if s.sample_id == r.sample_id => s.maps.push(map),
                _ => out.push(SampleAttention {
                    sample_id: r.sample_id.clone(),
                    tokens: r.tokens.clone(),
                    maps: vec![map],
                }),
            }
        }
        out
    }
}

/// Runs the fused model on `x` with recording switched on.
pub fn record_attention(trained: &Trained, vocab: &Vocab, x: &ModelInput) -> Result<SampleAttention> {
    if trained.meta.variant != Variant::Cast {
        return Err(Error::Invalid(format!(
            "{} has no cross-attention to record",
            trained.meta.variant
        )));
    }
    let mut g = Graph::new(&trained.store);
    let mut maps = Vec::new();
    trained
        .model
        .node_states(&mut g, x, &vec![false; x.graph.num_nodes()], Some(&mut maps))?;
    Ok(SampleAttention {
        sample_id: x.id.clone(),
        tokens: x.tokens.iter().map(|&t| vocab.token(t).to_string()).collect(),
        maps,
    })
}

/// Cosine similarity of every unordered pair of rows, pairs ordered
/// `(0,1), (0,2), …, (1,2), …`. Fewer than two rows give no values.
pub fn pairwise_cosine(m: &Tensor) -> Vec<f64> {
    let n = m.rows();
    let norms: Vec<f64> = (0..n).map(|r| m.row(r).iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for a in 0..n {
        for b in a + 1..n {
            let dot: f64 = m.row(a).iter().zip(m.row(b)).map(|(x, y)| x * y).sum();
            out.push(dot / (norms[a] * norms[b]));
        }
    }
    out
}

/// Counts per bin of width `1 / NUM_BINS` over `[0, 1]`. Values on or past
/// the edges land in the outer bins.
pub fn histogram(values: &[f64]) -> Vec<u64> {
    let mut h = vec![0u64; NUM_BINS];
    for &v in values {
        let i = (v * NUM_BINS as f64).floor();
        let i = if i.is_nan() { 0 } else { i.clamp(0.0, (NUM_BINS - 1) as f64) as usize };
        h[i] += 1;
    }
    h
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilarityOptions {
    /// Layers to report; all when absent.
    pub layers: Option<Vec<usize>>,
    /// One distribution per head instead of pooling heads per layer.
    pub per_head: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    pub layer: usize,
    /// Set for per-head reports.
    pub head: Option<usize>,
    pub values: Vec<f64>,
    pub histogram: Vec<u64>,
}

impl Distribution {
    pub fn label(&self) -> String {
        match self.head {
            Some(h) => format!("{}:h{h}", self.layer),
            None => self.layer.to_string(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn std(&self) -> f64 {
        let m = self.mean();
        (self.values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / self.values.len() as f64).sqrt()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimilarityReport {
    pub distributions: Vec<Distribution>,
    pub samples_used: usize,
    /// Samples with fewer than two nodes.
    pub samples_skipped: usize,
}

/// Histogram of one distribution as stored in the CSV export.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledHistogram {
    pub label: String,
    pub counts: Vec<u64>,
}

impl SimilarityReport {
    pub fn histograms(&self) -> Vec<LabeledHistogram> {
        self.distributions
            .iter()
            .map(|d| LabeledHistogram {
                label: d.label(),
                counts: d.histogram.clone(),
            })
            .collect()
    }

    pub fn get(&self, layer: usize, head: Option<usize>) -> Option<&Distribution> {
        self.distributions.iter().find(|d| d.layer == layer && d.head == head)
    }

    /// Counts, means and spreads as pretty JSON.
    pub fn summary_json(&self) -> String {
        let dists: Vec<_> = self
            .distributions
            .iter()
            .map(|d| {
                serde_json::json!({
                    "layer": d.layer,
                    "head": d.head,
                    "count": d.values.len(),
                    "mean": d.mean(),
                    "std": d.std(),
                })
            })
            .collect();
        serde_json::to_string_pretty(&serde_json::json!({
            "samples_used": self.samples_used,
            "samples_skipped": self.samples_skipped,
            "distributions": dists,
        }))
        .expect("summary serializes")
    }
}

/// Pools pairwise cosines over samples (and heads unless `per_head`) for
/// every selected layer. Samples are visited in id order, so the report
/// does not depend on the order of `samples`.
pub fn similarity_from_maps(samples: &[SampleAttention], opts: &SimilarityOptions) -> Result<SimilarityReport> {
    let mut sorted: Vec<&SampleAttention> = samples.iter().collect();
    sorted.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let mut pooled: BTreeMap<(usize, Option<usize>), Vec<f64>> = BTreeMap::new();
    let (mut used, mut skipped) = (0, 0);
    for s in sorted {
        let n = s.maps.first().map_or(0, |m| m.weights.rows());
        if n < 2 {
            log::debug!("skipping {}: {n} node(s)", s.sample_id);
            skipped += 1;
            continue;
        }
        used += 1;
        for m in &s.maps {
            if opts.layers.as_ref().is_some_and(|l| !l.contains(&m.layer)) {
                continue;
            }
            let key = (m.layer, opts.per_head.then_some(m.head));
            pooled.entry(key).or_default().extend(pairwise_cosine(&m.weights));
        }
    }
    if used == 0 {
        return Err(Error::Invalid(format!(
            "all {skipped} samples have fewer than two nodes"
        )));
    }
    let distributions = pooled
        .into_iter()
        .map(|((layer, head), values)| Distribution {
            layer,
            head,
            histogram: histogram(&values),
            values,
        })
        .collect();
    Ok(SimilarityReport {
        distributions,
        samples_used: used,
        samples_skipped: skipped,
    })
}

/// Records attention for rows `idx` of `data` and summarizes it.
pub fn similarity_distribution(
    trained: &Trained,
    data: &Dataset,
    idx: &[usize],
    opts: &SimilarityOptions,
) -> Result<SimilarityReport> {
    if idx.is_empty() {
        return Err(Error::Invalid("no samples to analyze".into()));
    }
    let samples = idx
        .par_iter()
        .map(|&i| record_attention(trained, &data.vocab, &data.inputs[i]))
        .collect::<Result<Vec<_>>>()?;
    similarity_from_maps(&samples, opts)
}

fn bin_edge(i: usize) -> f64 {
    i as f64 / NUM_BINS as f64
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(format!("csv: {e}"))
}

/// `layer,bin_lo,bin_hi,count`, one row per bin of every distribution.
pub fn report_to_csv(report: &SimilarityReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HISTOGRAM_HEADER).expect("in-memory write");
    for h in report.histograms() {
        for (i, c) in h.counts.iter().enumerate() {
            w.write_record([
                h.label.clone(),
                bin_edge(i).to_string(),
                bin_edge(i + 1).to_string(),
                c.to_string(),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

/// Inverse of [`report_to_csv`]. Every label must list the full set of
/// bins in order.
pub fn parse_report_csv(text: &str) -> Result<Vec<LabeledHistogram>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = r.headers().map_err(csv_err)?;
    if header.iter().ne(HISTOGRAM_HEADER) {
        return Err(Error::Parse(format!("histogram header must be `{}`", HISTOGRAM_HEADER.join(","))));
    }
    let mut out: Vec<LabeledHistogram> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad = |what: &str| Error::Parse(format!("histogram row {}: {what}", line + 2));
        if rec.len() != 4 {
            return Err(bad("expected 4 fields"));
        }
        let label = rec[0].to_string();
        let lo: f64 = rec[1].parse().map_err(|_| bad("bad bin_lo"))?;
        let hi: f64 = rec[2].parse().map_err(|_| bad("bad bin_hi"))?;
        let count: u64 = rec[3].parse().map_err(|_| bad("bad count"))?;
        if out.last().is_none_or(|h| h.label != label || h.counts.len() == NUM_BINS) {
            if out.last().is_some_and(|h| h.counts.len() != NUM_BINS) {
                return Err(bad("previous histogram is incomplete"));
            }
            out.push(LabeledHistogram {
                label,
                counts: Vec::with_capacity(NUM_BINS),
            });
        }
        let h = out.last_mut().expect("just pushed");
        let i = h.counts.len();
        if lo != bin_edge(i) || hi != bin_edge(i + 1) {
            return Err(bad("bins out of order"));
        }
        h.counts.push(count);
    }
    if out.last().is_some_and(|h| h.counts.len() != NUM_BINS) {
        return Err(Error::Parse("last histogram is incomplete".into()));
    }
    Ok(out)
}

/// Long-format weights of one sample:
/// `layer,head,node,token_index,token,weight`.
pub fn attention_to_csv(sample: &SampleAttention) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(ATTENTION_HEADER).expect("in-memory write");
    for m in &sample.maps {
        for node in 0..m.weights.rows() {
            for (t, v) in m.weights.row(node).iter().enumerate() {
                let token = sample.tokens.get(t).map_or("", String::as_str);
                w.write_record([
                    m.layer.to_string(),
                    m.head.to_string(),
                    node.to_string(),
                    t.to_string(),
                    token.to_string(),
                    v.to_string(),
                ])
                .expect("in-memory write");
            }
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}
