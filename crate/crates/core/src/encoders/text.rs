use serde::{Deserialize, Serialize};

use super::vocab::{MAX_TOKENS, PAD};
use crate::error::{Error, Result};
use crate::nn::{Activation, Embedding, Graph, LayerNorm, Linear, MultiHeadAttention, ParamStore, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextEncoderConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub max_len: usize,
    pub activation: Activation,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        Self {
            dim: 768,
            layers: 4,
            heads: 8,
            ffn_mult: 4,
            max_len: MAX_TOKENS,
            activation: Activation::Gelu,
        }
    }
}

impl TextEncoderConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::config(format!("{prefix}.dim"), "must be ≥ 2"));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::config(format!("{prefix}.heads"), format!("must divide dim {}", self.dim)));
        }
        if self.ffn_mult == 0 {
            return Err(Error::config(format!("{prefix}.ffn_mult"), "must be ≥ 1"));
        }
        if !(1..=MAX_TOKENS).contains(&self.max_len) {
            return Err(Error::config(format!("{prefix}.max_len"), format!("must be in 1..={MAX_TOKENS}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Block {
    ln1: LayerNorm,
    att: MultiHeadAttention,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

/// Pre-norm transformer over token ids with learned positions.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub config: TextEncoderConfig,
    tok: Embedding,
    pos: Embedding,
    blocks: Vec<Block>,
    ln_f: LayerNorm,
}

impl TextEncoder {
    pub fn new(store: &mut ParamStore, name: &str, vocab_size: usize, config: TextEncoderConfig) -> Result<Self> {
        config.validate(name)?;
        let d = config.dim;
        let tok = Embedding::new(store, &format!("{name}.tok"), vocab_size, d)?;
        let pos = Embedding::new(store, &format!("{name}.pos"), config.max_len, d)?;
        let blocks = (0..config.layers)
            .map(|l| {
                let p = format!("{name}.{l}");
                Ok(Block {
                    ln1: LayerNorm::new(store, &format!("{p}.ln1"), d)?,
                    att: MultiHeadAttention::new(store, &format!("{p}.att"), d, d, d, config.heads)?,
                    ln2: LayerNorm::new(store, &format!("{p}.ln2"), d)?,
                    ff1: Linear::new(store, &format!("{p}.ff1"), d, d * config.ffn_mult)?,
                    ff2: Linear::new(store, &format!("{p}.ff2"), d * config.ffn_mult, d)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ln_f = LayerNorm::new(store, &format!("{name}.ln_f"), d)?;
        Ok(Self {
            config,
            tok,
            pos,
            blocks,
            ln_f,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.tok.rows
    }

    /// Token states, one row per id. `[PAD]` positions are excluded as
    /// keys, so they never influence other rows.
    pub fn forward(&self, g: &mut Graph, ids: &[u32]) -> Result<Var> {
        if ids.is_empty() || ids.len() > self.config.max_len {
            return Err(Error::Shape(format!(
                "token sequence of length {} (max {})",
                ids.len(),
                self.config.max_len
            )));
        }
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        if let Some(bad) = idx.iter().find(|&&i| i >= self.tok.rows) {
            return Err(Error::Invalid(format!("token id {bad} outside vocabulary of {}", self.tok.rows)));
        }
        let allowed: Vec<bool> = ids.iter().map(|&i| i != PAD).collect();
        let allowed = if allowed.iter().all(|&a| a) {
            None
        } else if allowed.iter().any(|&a| a) {
            Some(allowed)
        } else {
            return Err(Error::Invalid("token sequence is all padding".into()));
        };
        let positions: Vec<usize> = (0..ids.len()).collect();
        let t = self.tok.forward(g, &idx)?;
        let p = self.pos.forward(g, &positions)?;
        let mut x = g.add(t, p)?;
        for b in &self.blocks {
            let h = b.ln1.forward(g, x)?;
            let (a, _) = b.att.forward(g, h, h, allowed.as_deref(), false)?;
            x = g.add(x, a)?;
            let h = b.ln2.forward(g, x)?;
            let h = b.ff1.forward(g, h)?;
            let h = g.activation(h, self.config.activation);
            let h = b.ff2.forward(g, h)?;
            x = g.add(x, h)?;
        }
        self.ln_f.forward(g, x)
    }
}
