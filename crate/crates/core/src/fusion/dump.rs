//! Binary dump of recorded attention maps.
//!
//! Layout: the 8-byte magic `CASTATTN`, then per record a little-endian
//! `u64` header length, a JSON header
//! `{sample_id, layer, head, node_count, token_count, tokens}` and
//! `node_count × token_count` little-endian `f64` weights in row-major order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const ATTENTION_MAGIC: &[u8; 8] = b"CASTATTN";
const MAX_HEADER: u64 = 1 << 24;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub sample_id: String,
    pub layer: usize,
    pub head: usize,
    pub tokens: Vec<String>,
    /// `nodes × tokens`
    pub weights: Tensor,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordHeader {
    sample_id: String,
    layer: usize,
    head: usize,
    node_count: usize,
    token_count: usize,
    tokens: Vec<String>,
}

pub fn encode_attention_dump(records: &[AttentionRecord]) -> Vec<u8> {
    let mut out = ATTENTION_MAGIC.to_vec();
    for r in records {
        let header = RecordHeader {
            sample_id: r.sample_id.clone(),
            layer: r.layer,
            head: r.head,
            node_count: r.weights.rows(),
            token_count: r.weights.cols(),
            tokens: r.tokens.clone(),
        };
        let h = serde_json::to_vec(&header).expect("header serializes");
        out.extend_from_slice(&(h.len() as u64).to_le_bytes());
        out.extend_from_slice(&h);
        for v in r.weights.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Parse(format!("attention dump truncated in {what}")));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

pub fn decode_attention_dump(mut bytes: &[u8]) -> Result<Vec<AttentionRecord>> {
    let magic = take(&mut bytes, 8, "magic")?;
    if magic != ATTENTION_MAGIC {
        return Err(Error::Parse("not an attention dump (bad magic)".into()));
    }
    let mut out = Vec::new();
    while !bytes.is_empty() {
        let len = u64::from_le_bytes(take(&mut bytes, 8, "header length")?.try_into().expect("8 bytes"));
        if len > MAX_HEADER {
            return Err(Error::Parse(format!("attention header of {len} bytes exceeds limit")));
        }
        let h: RecordHeader = serde_json::from_slice(take(&mut bytes, len as usize, "header")?)
            .map_err(|e| Error::Parse(format!("attention header: {e}")))?;
        if h.tokens.len() != h.token_count {
            return Err(Error::Parse(format!(
                "{} token labels for token_count {}",
                h.tokens.len(),
                h.token_count
            )));
        }
        let n = h
            .node_count
            .checked_mul(h.token_count)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Parse("attention record size overflows".into()))?;
        let payload = take(&mut bytes, n, "weights")?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        out.push(AttentionRecord {
            sample_id: h.sample_id,
            layer: h.layer,
            head: h.head,
            tokens: h.tokens,
            weights: Tensor::matrix(h.node_count, h.token_count, data)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Vec<AttentionRecord> {
        vec![
            AttentionRecord {
                sample_id: "syn-000001".into(),
                layer: 0,
                head: 1,
                tokens: vec!["[CLS]".into(), "Pbcn".into()],
                weights: Tensor::matrix(2, 2, vec![0.25, 0.75, 1.0, 0.0]).unwrap(),
            },
            AttentionRecord {
                sample_id: "syn-000002".into(),
                layer: 3,
                head: 0,
                tokens: vec!["[CLS]".into()],
                weights: Tensor::matrix(1, 1, vec![1.0]).unwrap(),
            },
        ]
    }

    #[test]
    fn round_trip() {
        let recs = sample();
        assert_eq!(decode_attention_dump(&encode_attention_dump(&recs)).unwrap(), recs);
        assert_eq!(decode_attention_dump(ATTENTION_MAGIC).unwrap(), vec![]);
    }

    #[test]
    fn rejects_damage() {
        let bytes = encode_attention_dump(&sample());
        assert!(decode_attention_dump(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode_attention_dump(b"CASTCKPT").is_err());
        let mut bad = bytes.clone();
        bad[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode_attention_dump(&bad).is_err());
    }

    proptest! {
        #[test]
        fn decode_never_panics(tail in proptest::collection::vec(any::<u8>(), 0..200)) {
            let mut bytes = ATTENTION_MAGIC.to_vec();
            bytes.extend(tail);
            let _ = decode_attention_dump(&bytes);
        }
    }
}
