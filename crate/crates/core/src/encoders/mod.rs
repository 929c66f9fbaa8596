//! Tokenizer, text encoder and structure encoder.

mod structure;
mod text;
mod vocab;

pub use structure::{StructureEncoder, StructureEncoderConfig, MASK_ELEMENT};
pub use text::{TextEncoder, TextEncoderConfig};
pub use vocab::{split_words, Vocab, CLS, MASK, MAX_TOKENS, PAD, SPECIALS, UNK};
