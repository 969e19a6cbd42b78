//! Token-match verification: a claim is supported exactly when the model's
//! top filler equals the token that was masked out.

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::cloze::fill_mask;
use crate::types::{ClozePrediction, MaskedClaim, Verdict, VerificationLabel};

fn is_edge_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}' | '\u{2019}' | '\u{201C}' | '\u{201D}' | '\u{00AB}' | '\u{00BB}'
                | '\u{2026}' | '\u{2013}' | '\u{2014}' | '\u{00BF}' | '\u{00A1}'
        )
}

/// Lowercase, NFC-compose, and strip leading/trailing punctuation.
pub fn normalize_token(t: &str) -> String {
    let composed: String = t.trim().to_lowercase().nfc().collect();
    composed.trim_matches(is_edge_punctuation).to_string()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    #[default]
    Normalized,
    /// Byte-exact comparison, for ablations.
    Exact,
}

impl MatchMode {
    pub fn matches(self, a: &str, b: &str) -> bool {
        match self {
            MatchMode::Normalized => normalize_token(a) == normalize_token(b),
            MatchMode::Exact => a == b,
        }
    }
}

pub fn verify_zero_shot(mc: &MaskedClaim, p: &ClozePrediction) -> Verdict {
    verify_zero_shot_with(mc, p, MatchMode::Normalized)
}

/// SUPPORTS on a match, REFUTES otherwise. Never NEI.
pub fn verify_zero_shot_with(mc: &MaskedClaim, p: &ClozePrediction, mode: MatchMode) -> Verdict {
    let predicted = if mode.matches(&p.token, &mc.gold_token) {
        VerificationLabel::Supports
    } else {
        VerificationLabel::Refutes
    };
    Verdict::zero_shot(mc.source.id, predicted, Some(fill_mask(mc, p)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::{apply_manual_mask, mask_last_token};
    use crate::types::{Claim, VerifierKind};
    use proptest::prelude::*;

    fn pred(t: &str) -> ClozePrediction {
        ClozePrediction { token: t.into(), score: 1.0, rank: 1 }
    }

    #[test]
    fn normalizes_tokens() {
        assert_eq!(normalize_token("Virginia"), "virginia");
        assert_eq!(normalize_token("Boyle."), "boyle");
        assert_eq!(normalize_token("1961"), "1961");
        assert_eq!(normalize_token("\u{201C}Beach's\u{201D}"), "beach's");
        // decomposed e + combining acute composes to é
        assert_eq!(normalize_token("Cafe\u{0301}"), "caf\u{e9}");
        assert_eq!(normalize_token("U.S."), "u.s");
    }

    #[test]
    fn matching_token_supports() {
        let c = Claim::new(1, "Thomas Jefferson founded the University of Virginia after retiring", None);
        let mc = apply_manual_mask(&c, 6).unwrap();
        let v = verify_zero_shot(&mc, &pred("Virginia"));
        assert_eq!(v.predicted, VerificationLabel::Supports);
        assert_eq!(v.verifier, VerifierKind::ZeroShot);
        assert!(v.class_probabilities.is_none());
        assert_eq!(v.evidence.unwrap().text, c.text);

        let mc = mask_last_token(&Claim::new(2, "Kuching is the capital of Sarawak.", None)).unwrap();
        assert_eq!(verify_zero_shot(&mc, &pred("Sarawak")).predicted, VerificationLabel::Supports);
    }

    #[test]
    fn mismatch_refutes() {
        let mc = mask_last_token(&Claim::new(3, "Tim Roth was born in 1961", None)).unwrap();
        let v = verify_zero_shot(&mc, &pred("London"));
        assert_eq!(v.predicted, VerificationLabel::Refutes);
        assert_eq!(v.evidence.unwrap().text, "Tim Roth was born in London");
    }

    #[test]
    fn exact_mode_is_case_sensitive() {
        let mc = mask_last_token(&Claim::new(1, "in Virginia", None)).unwrap();
        let v = verify_zero_shot_with(&mc, &pred("virginia"), MatchMode::Exact);
        assert_eq!(v.predicted, VerificationLabel::Refutes);
    }

    proptest! {
        #[test]
        fn reflexive_and_case_invariant(text in "[A-Za-z]{1,6}( [A-Za-zÀ-ÖØ-Þà-öø-ÿ]{1,6}){0,5}", flips in proptest::collection::vec(any::<bool>(), 8)) {
            let mc = mask_last_token(&Claim::new(0, text, None)).unwrap();
            let gold = mc.gold_token.clone();
            prop_assert_eq!(verify_zero_shot(&mc, &pred(&gold)).predicted, VerificationLabel::Supports);

            let flipped: String = gold.chars().zip(flips.iter().cycle()).map(|(c, f)| {
                if *f { c.to_uppercase().next().unwrap() } else { c.to_lowercase().next().unwrap() }
            }).collect();
            prop_assert_eq!(
                verify_zero_shot(&mc, &pred(&flipped)).predicted,
                verify_zero_shot(&mc, &pred(&gold)).predicted
            );
        }

        #[test]
        fn never_nei(text in "[a-z]{1,5}( [a-z]{1,5}){0,4}", token in "[a-zA-Z.]{1,6}") {
            let mc = mask_last_token(&Claim::new(0, text, None)).unwrap();
            prop_assert_ne!(verify_zero_shot(&mc, &pred(&token)).predicted, VerificationLabel::Nei);
        }
    }
}
