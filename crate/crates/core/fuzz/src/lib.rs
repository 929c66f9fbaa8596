//! Bodies of the fuzz targets. Each accepts arbitrary bytes, must never
//! panic on rejected input, and checks that whatever it accepts survives a
//! write/read cycle unchanged.

use cast_core::analysis::{parse_report_csv, NUM_BINS};
use cast_core::config::{Override, RunConfig};
use cast_core::corpus::{corpus_to_line, parse_corpus_line};
use cast_core::crystal::io::{parse_structure_line, structure_to_line};
use cast_core::encoders::{Vocab, CLS};
use cast_core::fusion::{decode_attention_dump, encode_attention_dump};
use cast_core::nn::Checkpoint;
use cast_core::trainer::RunLog;

fn text(data: &[u8]) -> Option<&str> {
    std::str::from_utf8(data).ok()
}

pub fn structure_line(data: &[u8]) {
    let Some(s) = text(data) else { return };
    if let Ok(parsed) = parse_structure_line(s) {
        let line = structure_to_line(&parsed);
        let again = parse_structure_line(&line).expect("written line parses");
        assert_eq!(structure_to_line(&again), line);
    }
}

pub fn corpus_line(data: &[u8]) {
    let Some(s) = text(data) else { return };
    if let Ok(parsed) = parse_corpus_line(s) {
        let line = corpus_to_line(&parsed);
        let again = parse_corpus_line(&line).expect("written line parses");
        assert_eq!(corpus_to_line(&again), line);
    }
}

pub fn checkpoint(data: &[u8]) {
    if let Ok(c) = Checkpoint::decode(data) {
        let bytes = c.encode();
        let again = Checkpoint::decode(&bytes).expect("encoded checkpoint decodes");
        assert_eq!(again.encode(), bytes);
    }
}

pub fn attention_dump(data: &[u8]) {
    if let Ok(records) = decode_attention_dump(data) {
        let bytes = encode_attention_dump(&records);
        let again = decode_attention_dump(&bytes).expect("encoded dump decodes");
        assert_eq!(encode_attention_dump(&again), bytes);
    }
}

pub fn vocab(data: &[u8]) {
    let Some(s) = text(data) else { return };
    if let Ok(v) = Vocab::parse(s) {
        let written = v.to_text();
        assert_eq!(Vocab::parse(&written).expect("written vocabulary parses"), v);
    }
}

/// Config text, then override lines after a `---` line.
pub fn config(data: &[u8]) {
    let Some(s) = text(data) else { return };
    let (doc, rest) = s.split_once("\n---\n").unwrap_or((s, ""));
    let Ok(overrides) = rest.lines().filter(|l| !l.trim().is_empty()).map(str::parse).collect::<Result<Vec<Override>, _>>() else {
        return;
    };
    if let Ok(cfg) = RunConfig::load(doc, &overrides) {
        let again = RunConfig::load(&cfg.to_toml(), &[]).expect("snapshot loads");
        assert_eq!(again.to_toml(), cfg.to_toml());
    }
}

pub fn report_csv(data: &[u8]) {
    let Some(s) = text(data) else { return };
    if let Ok(hists) = parse_report_csv(s) {
        assert!(hists.iter().all(|h| h.counts.len() == NUM_BINS));
    }
}

pub fn runlog_csv(data: &[u8]) {
    let Some(s) = text(data) else { return };
    if let Ok(steps) = RunLog::parse_csv(s) {
        let written = RunLog { steps, ..Default::default() }.to_csv();
        let again = RunLog::parse_csv(&written).expect("written log parses");
        assert_eq!(RunLog { steps: again, ..Default::default() }.to_csv(), written);
    }
}

/// First byte picks the length limit; the rest is both the vocabulary
/// source and the text to encode.
pub fn tokenize(data: &[u8]) {
    let Some((&limit, rest)) = data.split_first() else { return };
    let Some(s) = text(rest) else { return };
    let max_len = usize::from(limit % 64) + 1;
    let v = Vocab::build([s], 1);
    let ids = v.encode(s, max_len);
    assert!(!ids.is_empty() && ids.len() <= max_len);
    assert_eq!(ids[0], CLS);
    assert!(ids.iter().all(|&i| (i as usize) < v.len()));
}
