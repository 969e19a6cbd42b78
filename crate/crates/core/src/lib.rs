//! Fact verification with a masked language model as the only knowledge
//! source.
//!
//! A claim is turned into a cloze query by masking one token
//! ([`masking`]), a backend fills the blank ([`cloze`]) to produce an
//! "evidence" sentence, and the claim is judged either by matching the
//! filler against the held-out token ([`zeroshot`]) or by a small MLP over
//! entailment features of (claim, evidence) ([`entailment`]). [`evaluation`]
//! scores verdicts and buckets the errors; [`pipeline`] strings the stages
//! together for batch runs and [`service`] exposes them over HTTP for
//! interactive probing.

pub mod cloze;
pub mod dataset;
pub mod entailment;
pub mod error;
pub mod evaluation;
pub mod masking;
pub mod pipeline;
pub mod service;
pub mod session;
pub mod types;
pub mod zeroshot;

pub use error::{Error, Result};
pub use types::{
    parse_label, CharSpan, Claim, ClozePrediction, Evidence, MaskStrategy, MaskedClaim, Verdict,
    VerificationLabel, VerifierKind, MASK,
};
