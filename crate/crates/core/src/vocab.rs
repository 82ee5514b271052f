//! Tokenization and the token ↔ id mapping.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Lowercases and splits on whitespace; every other non-alphanumeric
/// character becomes a token of its own.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
            continue;
        }
        if !current.is_empty() {
            tokens.push(core::mem::take(&mut current));
        }
        if !ch.is_whitespace() {
            tokens.push(ch.to_lowercase().collect());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    index: BTreeMap<String, usize>,
    tokens: Vec<String>,
}

impl Vocabulary {
    /// Counts tokens over `sentences` and keeps those seen at least
    /// `min_count` times, ordered by frequency then lexicographically.
    pub fn build<I, S>(sentences: I, min_count: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[String]>,
    {
        if min_count == 0 {
            return Err(Error::config("min_count", "must be at least 1"));
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        let sentences: Vec<S> = sentences.into_iter().collect();
        for s in &sentences {
            for tok in s.as_ref() {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::degenerate("build_vocab", "corpus has no tokens"));
        }
        let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
        // BTreeMap iteration is already lexicographic; a stable sort keeps it
        // as the tie-breaker.
        kept.sort_by_key(|&(_, c)| core::cmp::Reverse(c));
        Self::from_tokens(kept.into_iter().map(|(t, _)| t.to_string()))
    }

    /// Vocabulary from non-reserved tokens in id order (ids start at 2).
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Result<Self> {
        let mut vocab = Vocabulary {
            index: BTreeMap::new(),
            tokens: Vec::new(),
        };
        for tok in [PAD_TOKEN.to_string(), UNK_TOKEN.to_string()].into_iter().chain(tokens) {
            if vocab.index.contains_key(&tok) {
                return Err(Error::contract(
                    "Vocabulary::from_tokens",
                    alloc::format!("duplicate token {tok:?}"),
                ));
            }
            vocab.index.insert(tok.clone(), vocab.tokens.len());
            vocab.tokens.push(tok);
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Never true: PAD and UNK are always present.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// All tokens in id order, reserved entries included.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}
