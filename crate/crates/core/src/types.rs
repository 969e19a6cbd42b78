//! Domain values shared by every stage of the pipeline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Mask placeholder used in every pipeline-level masked sentence. Backends
/// translate it to their own mask token.
pub const MASK: &str = "[MASK]";

/// The three FEVER verdicts, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VerificationLabel {
    Supports,
    Refutes,
    Nei,
}

impl VerificationLabel {
    pub const ALL: [VerificationLabel; 3] = [
        VerificationLabel::Supports,
        VerificationLabel::Refutes,
        VerificationLabel::Nei,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VerificationLabel::Supports => "SUPPORTS",
            VerificationLabel::Refutes => "REFUTES",
            VerificationLabel::Nei => "NOT ENOUGH INFO",
        }
    }

    /// Position in the fixed (SUPPORTS, REFUTES, NEI) order.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

/// Case-insensitive parse of a label string. `NEI` is accepted as an alias.
pub fn parse_label(text: &str) -> Result<VerificationLabel> {
    let t = text.trim();
    let found = if t.eq_ignore_ascii_case("SUPPORTS") {
        VerificationLabel::Supports
    } else if t.eq_ignore_ascii_case("REFUTES") {
        VerificationLabel::Refutes
    } else if t.eq_ignore_ascii_case("NOT ENOUGH INFO") || t.eq_ignore_ascii_case("NEI") {
        VerificationLabel::Nei
    } else {
        return Err(Error::UnknownLabel(text.to_string()));
    };
    Ok(found)
}

impl FromStr for VerificationLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_label(s)
    }
}

impl fmt::Display for VerificationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl Serialize for VerificationLabel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for VerificationLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse_label(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub id: u64,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<VerificationLabel>,
}

impl Claim {
    pub fn new(id: u64, text: impl Into<String>, gold_label: Option<VerificationLabel>) -> Self {
        Claim {
            id,
            text: text.into(),
            gold_label,
        }
    }
}

/// Half-open range of character (Unicode scalar) offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
}

impl CharSpan {
    pub fn new(start: usize, end: usize) -> Self {
        CharSpan { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &CharSpan) -> bool {
        self.start < other.end && other.start < self.end
    }

    /// Slice `text` by character offsets. Returns `None` when out of bounds.
    pub fn slice<'a>(&self, text: &'a str) -> Option<&'a str> {
        if self.start > self.end {
            return None;
        }
        let lo = char_to_byte(text, self.start)?;
        let hi = char_to_byte(text, self.end)?;
        Some(&text[lo..hi])
    }
}

/// Byte offset of the `n`th character; `n == char count` maps to `text.len()`.
pub(crate) fn char_to_byte(text: &str, n: usize) -> Option<usize> {
    text.char_indices()
        .map(|(b, _)| b)
        .chain(std::iter::once(text.len()))
        .nth(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MaskStrategy {
    LastToken,
    LastEntity,
    Manual,
}

impl FromStr for MaskStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "last_token" => Ok(MaskStrategy::LastToken),
            "last_entity" => Ok(MaskStrategy::LastEntity),
            "manual" => Ok(MaskStrategy::Manual),
            _ => Err(Error::Invalid(format!("unknown masking strategy {s:?}"))),
        }
    }
}

/// A claim with exactly one surface token replaced by [`MASK`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedClaim {
    pub source: Claim,
    pub masked_text: String,
    pub gold_token: String,
    pub mask_char_span: CharSpan,
    pub strategy: MaskStrategy,
    pub fallback_used: bool,
}

impl MaskedClaim {
    /// Masks `span` of `claim.text`. The span must be non-empty and in bounds,
    /// and the claim must not already contain the placeholder.
    pub(crate) fn from_span(
        claim: &Claim,
        span: CharSpan,
        strategy: MaskStrategy,
        fallback_used: bool,
    ) -> Result<Self> {
        let unmaskable = |reason: &str| Error::Unmaskable {
            claim_id: claim.id,
            reason: reason.to_string(),
        };
        if claim.text.contains(MASK) {
            return Err(unmaskable("claim text already contains the mask placeholder"));
        }
        if span.is_empty() {
            return Err(unmaskable("empty mask span"));
        }
        let gold = span
            .slice(&claim.text)
            .ok_or_else(|| unmaskable("mask span out of bounds"))?;
        let lo = char_to_byte(&claim.text, span.start).unwrap_or(0);
        let hi = char_to_byte(&claim.text, span.end).unwrap_or(claim.text.len());
        let masked_text = format!("{}{}{}", &claim.text[..lo], MASK, &claim.text[hi..]);
        Ok(MaskedClaim {
            source: claim.clone(),
            masked_text,
            gold_token: gold.to_string(),
            mask_char_span: span,
            strategy,
            fallback_used,
        })
    }

    /// Character offset of the placeholder inside `masked_text`.
    pub fn mask_start(&self) -> usize {
        self.mask_char_span.start
    }
}

/// Collapse runs of whitespace to single spaces and trim the ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClozePrediction {
    pub token: String,
    pub score: f64,
    /// 1 is the top prediction.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub text: String,
    pub filler: ClozePrediction,
    pub origin: MaskedClaim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VerifierKind {
    ZeroShot,
    EntailmentMlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub claim_id: u64,
    pub predicted: VerificationLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_probabilities: Option<[f64; 3]>,
    pub verifier: VerifierKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<Evidence>,
}

/// Tolerance on the sum of a class-probability vector.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-6;

/// Index of the largest entry; ties go to the earliest label.
pub fn argmax_label(probs: &[f64; 3]) -> VerificationLabel {
    let mut best = 0;
    for i in 1..3 {
        if probs[i] > probs[best] {
            best = i;
        }
    }
    VerificationLabel::ALL[best]
}

impl Verdict {
    pub fn zero_shot(claim_id: u64, predicted: VerificationLabel, evidence: Option<Evidence>) -> Self {
        Verdict {
            claim_id,
            predicted,
            class_probabilities: None,
            verifier: VerifierKind::ZeroShot,
            evidence,
        }
    }

    /// Builds a classifier verdict; the predicted label is always the argmax.
    pub fn from_probabilities(
        claim_id: u64,
        probs: [f64; 3],
        evidence: Option<Evidence>,
    ) -> Result<Self> {
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return Err(Error::Invalid(format!("probabilities out of [0,1]: {probs:?}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
            return Err(Error::Invalid(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Verdict {
            claim_id,
            predicted: argmax_label(&probs),
            class_probabilities: Some(probs),
            verifier: VerifierKind::EntailmentMlp,
            evidence,
        })
    }
}
