//! Tokenization, perturbation primitives, and the lexical embedding used for
//! the similarity constraint.
//!
//! Tokenization is whitespace-based with punctuation kept attached to the
//! adjacent word. BLEU scoring reuses the same tokenizer so similarity and
//! translation metrics stay internally consistent.

use crate::error::{CemaError, Result};
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// Hashing seed for the lexical char-3-gram embedder. Fixed so that corpora
/// vectorize identically across processes and machines.
pub const LEXICAL_HASH_SEED: u64 = 0x43454d415f763031; // "CEMA_v01"

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    /// Char index into the normalized raw string.
    pub start_char: usize,
    /// Exclusive end char index.
    pub end_char: usize,
}

/// A text with its normalized raw form and token list.
///
/// Invariant: joining `tokens` with single spaces reproduces `raw`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Text {
    raw: String,
    tokens: Vec<Token>,
}

impl Text {
    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn token_surfaces(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.surface.as_str()).collect()
    }

    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationKind {
    CharInsert,
    CharDelete,
    CharSwapAdjacent,
    CharSubstitute,
    WordSubstitute,
}

/// One atomic edit against a tokenized text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Perturbation {
    pub kind: PerturbationKind,
    pub token_index: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub char_offset: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub payload: Option<String>,
}

impl Perturbation {
    pub fn char_insert(token_index: usize, char_offset: usize, ch: char) -> Self {
        Self {
            kind: PerturbationKind::CharInsert,
            token_index,
            char_offset: Some(char_offset),
            payload: Some(ch.to_string()),
        }
    }

    pub fn char_delete(token_index: usize, char_offset: usize) -> Self {
        Self {
            kind: PerturbationKind::CharDelete,
            token_index,
            char_offset: Some(char_offset),
            payload: None,
        }
    }

    pub fn char_swap_adjacent(token_index: usize, char_offset: usize) -> Self {
        Self {
            kind: PerturbationKind::CharSwapAdjacent,
            token_index,
            char_offset: Some(char_offset),
            payload: None,
        }
    }

    pub fn char_substitute(token_index: usize, char_offset: usize, ch: char) -> Self {
        Self {
            kind: PerturbationKind::CharSubstitute,
            token_index,
            char_offset: Some(char_offset),
            payload: Some(ch.to_string()),
        }
    }

    pub fn word_substitute(token_index: usize, word: impl Into<String>) -> Self {
        Self {
            kind: PerturbationKind::WordSubstitute,
            token_index,
            char_offset: None,
            payload: Some(word.into()),
        }
    }
}

/// NFC-normalize, collapse whitespace runs to single spaces, and tokenize on
/// spaces. Punctuation stays attached to its word.
pub fn normalize_and_tokenize(raw: &str) -> Result<Text> {
    let normalized: String = raw.nfc().collect::<String>();
    let words: Vec<&str> = normalized.split_whitespace().collect();
    if words.is_empty() {
        return Err(CemaError::EmptyText);
    }
    let joined = words.join(" ");
    let mut tokens = Vec::with_capacity(words.len());
    let mut pos = 0usize;
    for word in &words {
        let len = word.chars().count();
        tokens.push(Token {
            surface: (*word).to_string(),
            start_char: pos,
            end_char: pos + len,
        });
        pos += len + 1; // trailing single space
    }
    Ok(Text {
        raw: joined,
        tokens,
    })
}

/// Apply a single perturbation, returning a fresh `Text`.
///
/// A char-delete that empties a token removes that token entirely; a text
/// reduced to zero tokens is an invalid edit.
pub fn apply_perturbation(text: &Text, p: &Perturbation) -> Result<Text> {
    let n = text.tokens.len();
    if p.token_index >= n {
        return Err(CemaError::InvalidEdit(format!(
            "token index {} out of range (token count {})",
            p.token_index, n
        )));
    }
    let surface: Vec<char> = text.tokens[p.token_index].surface.chars().collect();
    let offset = p.char_offset;
    let within = |o: usize| o < surface.len();

    let new_surface: String = match p.kind {
        PerturbationKind::CharInsert => {
            let o = offset.ok_or_else(|| CemaError::InvalidEdit("missing char_offset".into()))?;
            if o > surface.len() {
                return Err(CemaError::InvalidEdit("insert offset out of range".into()));
            }
            let payload = p
                .payload
                .as_deref()
                .ok_or_else(|| CemaError::InvalidEdit("missing payload".into()))?;
            let mut s: String = surface[..o].iter().collect();
            s.push_str(payload);
            s.extend(&surface[o..]);
            s
        }
        PerturbationKind::CharDelete => {
            let o = offset.ok_or_else(|| CemaError::InvalidEdit("missing char_offset".into()))?;
            if !within(o) {
                return Err(CemaError::InvalidEdit("delete offset out of range".into()));
            }
            surface
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != o)
                .map(|(_, c)| c)
                .collect()
        }
        PerturbationKind::CharSwapAdjacent => {
            let o = offset.ok_or_else(|| CemaError::InvalidEdit("missing char_offset".into()))?;
            if o + 1 >= surface.len() {
                return Err(CemaError::InvalidEdit("swap offset out of range".into()));
            }
            let mut s = surface.clone();
            s.swap(o, o + 1);
            s.into_iter().collect()
        }
        PerturbationKind::CharSubstitute => {
            let o = offset.ok_or_else(|| CemaError::InvalidEdit("missing char_offset".into()))?;
            if !within(o) {
                return Err(CemaError::InvalidEdit("substitute offset out of range".into()));
            }
            let payload = p
                .payload
                .as_deref()
                .ok_or_else(|| CemaError::InvalidEdit("missing payload".into()))?;
            let mut s: String = surface[..o].iter().collect();
            s.push_str(payload);
            s.extend(&surface[o + 1..]);
            s
        }
        PerturbationKind::WordSubstitute => p
            .payload
            .clone()
            .ok_or_else(|| CemaError::InvalidEdit("missing payload".into()))?,
    };

    let mut words: Vec<String> = text
        .tokens
        .iter()
        .map(|t| t.surface.clone())
        .collect();
    words[p.token_index] = new_surface;
    let rebuilt = words.join(" ");
    normalize_and_tokenize(&rebuilt)
        .map_err(|_| CemaError::InvalidEdit("edit removed the last token".into()))
}

/// Fixed-length real vector produced by an embedder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn fnv1a_seeded(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64 ^ seed;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Hashed character-3-gram term-frequency embedding with L2 normalization.
///
/// Each token is padded with boundary markers before the 3-gram window runs,
/// so edits near word boundaries register as strongly as interior edits.
pub fn lexical_embed(text: &Text, dim: usize) -> Result<EmbeddingVector> {
    if dim < 64 {
        return Err(CemaError::Config(format!(
            "embedding dim must be >= 64, got {dim}"
        )));
    }
    let mut values = vec![0.0f64; dim];
    for token in &text.tokens {
        let padded: Vec<char> = std::iter::once('\u{2}')
            .chain(token.surface.chars())
            .chain(std::iter::once('\u{3}'))
            .collect();
        for window in padded.windows(3) {
            let gram: String = window.iter().collect();
            let h = fnv1a_seeded(LEXICAL_HASH_SEED, gram.as_bytes());
            values[(h % dim as u64) as usize] += 1.0;
        }
        // tokens of length one yield a single 3-gram via padding
        if padded.len() < 3 {
            let gram: String = padded.iter().collect();
            let h = fnv1a_seeded(LEXICAL_HASH_SEED, gram.as_bytes());
            values[(h % dim as u64) as usize] += 1.0;
        }
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut values {
            *v /= norm;
        }
    }
    Ok(EmbeddingVector { values })
}

/// Standard cosine similarity; errors on zero vectors.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(CemaError::Config(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let na = a.l2_norm();
    let nb = b.l2_norm();
    if na == 0.0 || nb == 0.0 {
        return Err(CemaError::UndefinedSimilarity);
    }
    let dot: f64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| x * y)
        .sum();
    Ok(dot / (na * nb))
}
