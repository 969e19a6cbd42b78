//! Deterministic offline feature backends.

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EncoderBackend, EntailmentBackend};
use crate::error::Result;
use crate::masking::tokenize_surface;
use crate::types::VerificationLabel;
use crate::zeroshot::normalize_token;

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn words(text: &str) -> Vec<String> {
    tokenize_surface(text)
        .into_iter()
        .filter(|t| !t.is_punctuation())
        .map(|t| normalize_token(&t.text))
        .filter(|t| !t.is_empty())
        .collect()
}

/// Signed feature hashing of `tokens` into `out`, scaled to unit norm
/// for distinct tokens.
fn hash_into(out: &mut [f64], tag: &str, tokens: &[&String]) {
    if out.is_empty() || tokens.is_empty() {
        return;
    }
    let scale = 1.0 / (tokens.len() as f64).sqrt();
    for t in tokens {
        let h = fnv1a(format!("{tag}\u{1f}{t}").as_bytes());
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        out[(h % out.len() as u64) as usize] += sign * scale;
    }
}

/// Hashed bag-of-words pair features: premise words, hypothesis words,
/// words only in the hypothesis, words only in the premise. Four equal
/// blocks, the last absorbing any remainder.
#[derive(Debug, Clone)]
pub struct HashEntailment {
    dim: usize,
}

impl HashEntailment {
    /// # Panics
    /// If `dim < 4`.
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 4, "hash entailment features need at least 4 dimensions");
        HashEntailment { dim }
    }
}

impl EntailmentBackend for HashEntailment {
    fn id(&self) -> &str {
        "hash-entailment"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn pair_features(&self, premise: &str, hypothesis: &str) -> Result<Vec<f64>> {
        let p = words(premise);
        let h = words(hypothesis);
        let p_set: HashSet<&String> = p.iter().collect();
        let h_set: HashSet<&String> = h.iter().collect();
        let mut h_only: Vec<&String> = h.iter().filter(|w| !p_set.contains(w)).collect();
        let mut p_only: Vec<&String> = p.iter().filter(|w| !h_set.contains(w)).collect();
        h_only.dedup();
        p_only.dedup();

        let mut out = vec![0.0; self.dim];
        let q = self.dim / 4;
        let (b0, rest) = out.split_at_mut(q);
        let (b1, rest) = rest.split_at_mut(q);
        let (b2, b3) = rest.split_at_mut(q);
        hash_into(b0, "p", &p.iter().collect::<Vec<_>>());
        hash_into(b1, "h", &h.iter().collect::<Vec<_>>());
        hash_into(b2, "h-p", &h_only);
        hash_into(b3, "p-h", &p_only);
        Ok(out)
    }
}

/// Hashed bag-of-words sentence embedding.
#[derive(Debug, Clone)]
pub struct HashEncoder {
    dim: usize,
}

impl HashEncoder {
    /// # Panics
    /// If `dim == 0`.
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0);
        HashEncoder { dim }
    }
}

impl EncoderBackend for HashEncoder {
    fn id(&self) -> &str {
        "hash-encoder"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, sentence: &str) -> Result<Vec<f64>> {
        let w = words(sentence);
        let mut out = vec![0.0; self.dim];
        hash_into(&mut out, "s", &w.iter().collect::<Vec<_>>());
        Ok(out)
    }
}

/// Test backend that knows each claim's label and writes it into the
/// features: +`strength` on every third of the first 30 coordinates,
/// offset by class, over uniform noise seeded by the sentence text.
/// Claims it does not know get noise only.
#[derive(Debug, Clone)]
pub struct PlantedEntailment {
    dim: usize,
    labels: HashMap<String, VerificationLabel>,
    noise: f64,
    strength: f64,
}

impl PlantedEntailment {
    pub fn new(dim: usize, labels: impl IntoIterator<Item = (String, VerificationLabel)>) -> Self {
        assert!(dim >= 3, "planted features need at least 3 dimensions");
        PlantedEntailment {
            dim,
            labels: labels.into_iter().collect(),
            noise: 1.0,
            strength: 1.0,
        }
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }
}

impl EntailmentBackend for PlantedEntailment {
    fn id(&self) -> &str {
        "planted"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn pair_features(&self, premise: &str, hypothesis: &str) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(format!("{premise}\u{1f}{hypothesis}").as_bytes()));
        let mut out: Vec<f64> = (0..self.dim)
            .map(|_| self.noise * rng.random_range(-1.0..1.0))
            .collect();
        let label = self
            .labels
            .get(hypothesis)
            .or_else(|| self.labels.get(premise));
        if let Some(l) = label {
            for i in (l.index()..self.dim.min(30)).step_by(3) {
                out[i] += self.strength;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn identical_pair_has_empty_difference_blocks() {
        let f = HashEntailment::new(40).pair_features("Chile is a country.", "chile is a COUNTRY").unwrap();
        assert!(f[20..].iter().all(|v| *v == 0.0));
        assert!(f[..10].iter().any(|v| *v != 0.0));
    }

    #[test]
    fn planted_signal_marks_the_class() {
        let p = PlantedEntailment::new(12, [("x".to_string(), VerificationLabel::Nei)]).with_noise(0.0);
        let f = p.pair_features("ev", "x").unwrap();
        assert_eq!(f, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        assert!(p.pair_features("ev", "unknown").unwrap().iter().all(|v| *v == 0.0));
    }
}
