//! Turning a claim into a cloze query.
//!
//! Three strategies: the last surface token, the last named entity (needs a
//! [`NerBackend`]), or a caller-chosen token index.

mod ner;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use ner::{entity_label_at, EntitySpan, LexiconNer, NerBackend, StreamNer};

use crate::error::{Error, Result};
use crate::types::{CharSpan, Claim, MaskStrategy, MaskedClaim};

/// Sentence punctuation peeled off the ends of whitespace-delimited words.
pub const SENTENCE_PUNCTUATION: [char; 6] = ['.', ',', '!', '?', ';', ':'];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurfaceToken {
    pub text: String,
    pub span: CharSpan,
}

impl SurfaceToken {
    pub fn is_punctuation(&self) -> bool {
        self.text.chars().all(|c| SENTENCE_PUNCTUATION.contains(&c))
    }
}

/// Whitespace tokenization with leading and trailing sentence punctuation
/// split into one-character tokens. Offsets are in characters.
pub fn tokenize_surface(text: &str) -> Vec<SurfaceToken> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        split_word(&chars, start, i, &mut out);
    }
    out
}

fn split_word(chars: &[char], start: usize, end: usize, out: &mut Vec<SurfaceToken>) {
    let is_p = |c: char| SENTENCE_PUNCTUATION.contains(&c);
    let mut lo = start;
    while lo < end && is_p(chars[lo]) {
        out.push(token(chars, lo, lo + 1));
        lo += 1;
    }
    if lo == end {
        return;
    }
    let mut hi = end;
    while hi > lo && is_p(chars[hi - 1]) {
        hi -= 1;
    }
    out.push(token(chars, lo, hi));
    for p in hi..end {
        out.push(token(chars, p, p + 1));
    }
}

fn token(chars: &[char], start: usize, end: usize) -> SurfaceToken {
    SurfaceToken {
        text: chars[start..end].iter().collect(),
        span: CharSpan::new(start, end),
    }
}

/// Masks the final non-punctuation surface token.
pub fn mask_last_token(claim: &Claim) -> Result<MaskedClaim> {
    let last = tokenize_surface(&claim.text)
        .into_iter()
        .rev()
        .find(|t| !t.is_punctuation())
        .ok_or_else(|| Error::Unmaskable {
            claim_id: claim.id,
            reason: "claim has no non-punctuation token".into(),
        })?;
    MaskedClaim::from_span(claim, last.span, MaskStrategy::LastToken, false)
}

/// Masks the final token of the entity with the greatest end offset, or
/// falls back to [`mask_last_token`] when the backend finds no entity.
pub fn mask_last_entity(claim: &Claim, ner: &dyn NerBackend) -> Result<MaskedClaim> {
    let entities = ner::checked_entities(ner, &claim.text)?;
    let target = entities.iter().max_by_key(|e| e.char_span.end).and_then(|e| {
        tokenize_surface(&claim.text)
            .into_iter()
            .rfind(|t| !t.is_punctuation() && t.span.overlaps(&e.char_span))
            .map(|t| {
                CharSpan::new(
                    t.span.start.max(e.char_span.start),
                    t.span.end.min(e.char_span.end),
                )
            })
    });
    match target {
        Some(span) => MaskedClaim::from_span(claim, span, MaskStrategy::LastEntity, false),
        None => {
            let mut mc = mask_last_token(claim)?;
            mc.strategy = MaskStrategy::LastEntity;
            mc.fallback_used = true;
            Ok(mc)
        }
    }
}

/// Masks the surface token at `token_index` (as numbered by
/// [`tokenize_surface`]).
pub fn apply_manual_mask(claim: &Claim, token_index: usize) -> Result<MaskedClaim> {
    let tokens = tokenize_surface(&claim.text);
    let t = tokens.get(token_index).ok_or(Error::TokenIndex {
        index: token_index,
        len: tokens.len(),
    })?;
    MaskedClaim::from_span(claim, t.span, MaskStrategy::Manual, false)
}

/// A batch masking policy: strategy plus the NER backend it may need.
#[derive(Clone)]
pub struct Masker {
    strategy: MaskStrategy,
    ner: Option<Arc<dyn NerBackend>>,
}

impl Masker {
    pub fn new(strategy: MaskStrategy, ner: Option<Arc<dyn NerBackend>>) -> Self {
        Masker { strategy, ner }
    }

    pub fn strategy(&self) -> MaskStrategy {
        self.strategy
    }

    pub fn mask(&self, claim: &Claim) -> Result<MaskedClaim> {
        match self.strategy {
            MaskStrategy::LastToken => mask_last_token(claim),
            MaskStrategy::LastEntity => {
                let ner = self.ner.as_deref().ok_or_else(|| {
                    Error::Config("last-entity masking needs an NER backend".into())
                })?;
                mask_last_entity(claim, ner)
            }
            MaskStrategy::Manual => Err(Error::Config(
                "manual masking needs a token index; use apply_manual_mask".into(),
            )),
        }
    }
}

impl std::fmt::Debug for Masker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Masker")
            .field("strategy", &self.strategy)
            .field("ner", &self.ner.is_some())
            .finish()
    }
}
