#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use clozecheck::entailment::EntailmentBackend;
use clozecheck::pipeline::{ClozeBackendConfig, PipelineConfig};
use clozecheck::{Result, VerificationLabel};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

/// The five example claims against the matching mock table.
pub fn example_config(output_dir: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(
        fixture("claims.jsonl"),
        ClozeBackendConfig::Mock {
            table: fixture("cloze_mock.jsonl"),
            vocab: Some(fixture("vocab.txt")),
        },
        output_dir,
    );
    cfg.ner_lexicon = Some(fixture("ner_lexicon.jsonl"));
    cfg
}

pub struct PlantedCorpus {
    pub claims: Vec<(u64, String, VerificationLabel)>,
}

/// Claims `first..first+n` with labels cycling through the three classes.
pub fn planted_claims(first: u64, n: u64) -> PlantedCorpus {
    let claims = (first..first + n)
        .map(|i| {
            let label = VerificationLabel::ALL[(i % 3) as usize];
            (i, format!("Subject{i} is linked to object{i}."), label)
        })
        .collect();
    PlantedCorpus { claims }
}

impl PlantedCorpus {
    pub fn write_claims(&self, path: &Path) {
        let body: String = self
            .claims
            .iter()
            .map(|(id, text, label)| {
                format!("{}\n", serde_json::json!({"id": id, "claim": text, "label": label.as_str()}))
            })
            .collect();
        fs::write(path, body).unwrap();
    }

    /// Mock entries so every claim gets a filler (its own last word).
    pub fn mock_lines(&self) -> String {
        self.claims
            .iter()
            .map(|(id, text, _)| {
                let masked = text.replace(&format!("object{id}"), "[MASK]");
                format!(
                    "{}\n",
                    serde_json::json!({"masked_text": masked, "predictions": [{"token": format!("object{id}"), "score": 0.5}]})
                )
            })
            .collect()
    }

    pub fn labels(&self) -> impl Iterator<Item = (String, VerificationLabel)> + '_ {
        self.claims.iter().map(|(_, t, l)| (t.clone(), *l))
    }
}

/// Counts calls to a wrapped backend.
pub struct Counting<B> {
    pub inner: B,
    pub calls: Arc<AtomicUsize>,
}

impl<B: EntailmentBackend> EntailmentBackend for Counting<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn pair_features(&self, premise: &str, hypothesis: &str) -> Result<Vec<f64>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.pair_features(premise, hypothesis)
    }
}
