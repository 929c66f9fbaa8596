use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

pub const CLS: u32 = 0;
pub const PAD: u32 = 1;
pub const MASK: u32 = 2;
pub const UNK: u32 = 3;
pub const SPECIALS: [&str; 4] = ["[CLS]", "[PAD]", "[MASK]", "[UNK]"];
pub const MAX_TOKENS: usize = 512;

/// Whitespace split, then leading and trailing ASCII punctuation peeled off
/// into single-character tokens. Interior punctuation stays, so `Fm-3m`,
/// `2.14` and `P6_3/mmc` are one token each.
pub fn split_words(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let bytes = word.as_bytes();
        let mut lo = 0;
        let mut hi = bytes.len();
        while lo < hi && bytes[lo].is_ascii_punctuation() {
            lo += 1;
        }
        while hi > lo && bytes[hi - 1].is_ascii_punctuation() {
            hi -= 1;
        }
        for i in 0..lo {
            out.push(&word[i..i + 1]);
        }
        if lo < hi {
            out.push(&word[lo..hi]);
        }
        for i in hi.max(lo)..bytes.len() {
            out.push(&word[i..i + 1]);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Parse(format!("invalid vocabulary token {t:?}")));
            }
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Parse(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Specials first, then words seen at least `min_freq` times ordered by
    /// descending count and then lexicographically.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_freq: usize) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for t in texts {
            for w in split_words(t) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut words: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_freq.max(1) && !SPECIALS.contains(w))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().map(|(w, _)| w.to_string()))
            .collect();
        Self::from_tokens(tokens).expect("built vocabulary is valid")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map_or(SPECIALS[UNK as usize], |s| s.as_str())
    }

    /// `[CLS]` followed by word ids, truncated to `max_len` in total.
    pub fn encode(&self, text: &str, max_len: usize) -> Vec<u32> {
        let mut ids = vec![CLS];
        ids.extend(split_words(text).into_iter().map(|w| self.id(w)));
        ids.truncate(max_len.max(1));
        ids
    }

    pub fn write(&self, mut w: impl Write) -> std::io::Result<()> {
        for (i, t) in self.tokens.iter().enumerate() {
            writeln!(w, "{t}\t{i}")?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("tokens are utf-8")
    }

    /// Parses `token<TAB>id` lines. Ids must run 0, 1, 2, … and the first
    /// four tokens must be the specials.
    pub fn parse(text: &str) -> Result<Self> {
        Self::read(text.as_bytes())
    }

    pub fn read(r: impl BufRead) -> Result<Self> {
        let mut tokens = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::Parse(format!("vocab line {}: {e}", i + 1)))?;
            let (tok, id) = line
                .split_once('\t')
                .ok_or_else(|| Error::Parse(format!("vocab line {}: expected `token<TAB>id`", i + 1)))?;
            let id: usize = id
                .parse()
                .map_err(|_| Error::Parse(format!("vocab line {}: bad id `{id}`", i + 1)))?;
            if id != i {
                return Err(Error::Parse(format!("vocab line {}: id {id} out of sequence", i + 1)));
            }
            tokens.push(tok.to_string());
        }
        if tokens.len() < SPECIALS.len() || tokens[..4].iter().zip(SPECIALS).any(|(a, b)| a != b) {
            return Err(Error::Parse("vocabulary must start with [CLS] [PAD] [MASK] [UNK]".into()));
        }
        Self::from_tokens(tokens)
    }
}
