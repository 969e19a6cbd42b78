//! Learned verification: entailment features of (claim, evidence) fed to a
//! small MLP classifier.
//!
//! Feature backends are pluggable. [`FeatureExtractor::Entailment`] scores
//! the pair with a premise/hypothesis model; [`FeatureExtractor::Encoder`]
//! embeds the claim alone, which gives the frozen-encoder baseline with the
//! same trainer and classifier.

mod cache;
mod mlp;
mod mock;
mod model_io;
mod train;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use cache::{input_key, FeatureCache};
pub use mlp::{
    adam_step, adam_update, loss_and_grad, mlp_forward, AdamHyper, AdamState, MlpParams, CLASSES,
};
pub use mock::{HashEncoder, HashEntailment, PlantedEntailment};
pub use model_io::{read_model, write_model, MODEL_FORMAT_VERSION};
pub use train::{accuracy, train, LabeledFeatures, TrainConfig, TrainedModel};

use crate::error::{Error, Result};
use crate::types::{Claim, Evidence, Verdict};

/// Default feature width.
pub const DEFAULT_FEATURE_DIM: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FeatureSource {
    Entailment,
    Encoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub source: FeatureSource,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, source: FeatureSource) -> Self {
        FeatureVector { values, source }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Premise/hypothesis scorer exposing its last pre-softmax layer.
pub trait EntailmentBackend: Send + Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn pair_features(&self, premise: &str, hypothesis: &str) -> Result<Vec<f64>>;
    fn concurrency_safe(&self) -> bool {
        true
    }
}

/// Frozen sentence encoder.
pub trait EncoderBackend: Send + Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn encode(&self, sentence: &str) -> Result<Vec<f64>>;
    fn concurrency_safe(&self) -> bool {
        true
    }
}

/// Which sentence plays the premise.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairOrientation {
    /// premise = generated evidence, hypothesis = claim
    #[default]
    EvidenceEntailsClaim,
    ClaimEntailsEvidence,
}

#[derive(Clone)]
pub enum FeatureExtractor {
    Entailment {
        backend: Arc<dyn EntailmentBackend>,
        orientation: PairOrientation,
    },
    Encoder(Arc<dyn EncoderBackend>),
}

impl FeatureExtractor {
    pub fn entailment(backend: Arc<dyn EntailmentBackend>) -> Self {
        FeatureExtractor::Entailment {
            backend,
            orientation: PairOrientation::default(),
        }
    }

    pub fn source(&self) -> FeatureSource {
        match self {
            FeatureExtractor::Entailment { .. } => FeatureSource::Entailment,
            FeatureExtractor::Encoder(_) => FeatureSource::Encoder,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FeatureExtractor::Entailment { backend, .. } => backend.dim(),
            FeatureExtractor::Encoder(b) => b.dim(),
        }
    }

    /// Backend identity including orientation; part of feature cache keys.
    pub fn id(&self) -> String {
        match self {
            FeatureExtractor::Entailment {
                backend,
                orientation,
            } => {
                let o = match orientation {
                    PairOrientation::EvidenceEntailsClaim => "ev>claim",
                    PairOrientation::ClaimEntailsEvidence => "claim>ev",
                };
                format!("{}[{o}]", backend.id())
            }
            FeatureExtractor::Encoder(b) => b.id().to_string(),
        }
    }

    pub fn concurrency_safe(&self) -> bool {
        match self {
            FeatureExtractor::Entailment { backend, .. } => backend.concurrency_safe(),
            FeatureExtractor::Encoder(b) => b.concurrency_safe(),
        }
    }

    fn raw(&self, claim: &Claim, ev: &Evidence) -> Result<Vec<f64>> {
        match self {
            FeatureExtractor::Entailment {
                backend,
                orientation: PairOrientation::EvidenceEntailsClaim,
            } => backend.pair_features(&ev.text, &claim.text),
            FeatureExtractor::Entailment {
                backend,
                orientation: PairOrientation::ClaimEntailsEvidence,
            } => backend.pair_features(&claim.text, &ev.text),
            FeatureExtractor::Encoder(b) => b.encode(&claim.text),
        }
    }
}

impl std::fmt::Debug for FeatureExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FeatureExtractor")
            .field("id", &self.id())
            .field("dim", &self.dim())
            .finish()
    }
}

/// Features for one (claim, evidence) pair, checked against the run's
/// configured width.
pub fn extract_features(
    claim: &Claim,
    ev: &Evidence,
    extractor: &FeatureExtractor,
    expected_dim: usize,
) -> Result<FeatureVector> {
    let values = extractor.raw(claim, ev)?;
    if values.len() != expected_dim {
        return Err(Error::Config(format!(
            "feature backend {} returned {} values, run is configured for {expected_dim}",
            extractor.id(),
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Backend(format!(
            "feature backend {} returned a non-finite value",
            extractor.id()
        )));
    }
    Ok(FeatureVector::new(values, extractor.source()))
}

/// Classifies a claim with a trained model.
pub fn predict(
    claim: &Claim,
    ev: &Evidence,
    model: &TrainedModel,
    extractor: &FeatureExtractor,
) -> Result<Verdict> {
    if extractor.source() != model.feature_source {
        return Err(Error::Config(format!(
            "model was trained on {:?} features, extractor gives {:?}",
            model.feature_source,
            extractor.source()
        )));
    }
    let fv = extract_features(claim, ev, extractor, model.input_dim())?;
    predict_features(claim.id, &fv, model, Some(ev.clone()))
}

/// Classifies precomputed features.
pub fn predict_features(
    claim_id: u64,
    fv: &FeatureVector,
    model: &TrainedModel,
    evidence: Option<Evidence>,
) -> Result<Verdict> {
    if fv.source != model.feature_source {
        return Err(Error::Config("feature source does not match model".into()));
    }
    let probs = mlp_forward(&fv.values, &model.params)?;
    Verdict::from_probabilities(claim_id, probs, evidence)
}
