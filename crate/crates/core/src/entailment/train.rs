use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{adam_step, loss_and_grad, mlp_forward, AdamHyper, AdamState, MlpParams};
use super::{FeatureSource, FeatureVector};
use crate::error::{Error, Result};
use crate::types::{argmax_label, VerificationLabel};

/// Optimization settings. Defaults: Adam at lr 0.001, batches of 32,
/// at most 200 epochs with patience 30, hidden width 100.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub hidden_size: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 32,
            max_epochs: 200,
            patience: 30,
            hidden_size: 100,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive_reals = [
            self.learning_rate,
            self.adam_beta1,
            self.adam_beta2,
            self.adam_epsilon,
        ];
        if positive_reals.iter().any(|v| !(v.is_finite() && *v > 0.0))
            || self.adam_beta1 >= 1.0
            || self.adam_beta2 >= 1.0
        {
            return Err(Error::Config(format!("invalid optimizer settings: {self:?}")));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 || self.hidden_size == 0 {
            return Err(Error::Config("batch size, epochs, patience and hidden size must be positive".into()));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} exceeds max epochs {}",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: MlpParams,
    pub config: TrainConfig,
    /// Zero-based index into `dev_accuracy_history`.
    pub best_epoch: usize,
    pub dev_accuracy_history: Vec<f64>,
    pub feature_source: FeatureSource,
}

impl TrainedModel {
    pub fn input_dim(&self) -> usize {
        self.params.input_dim
    }

    pub fn epochs_run(&self) -> usize {
        self.dev_accuracy_history.len()
    }
}

pub type LabeledFeatures = (FeatureVector, VerificationLabel);

fn check_split(data: &[LabeledFeatures], dim: usize, source: FeatureSource) -> Result<()> {
    for (fv, _) in data {
        if fv.values.len() != dim || fv.source != source {
            return Err(Error::Config(format!(
                "inconsistent features: expected {source:?}/{dim}, found {:?}/{}",
                fv.source,
                fv.values.len()
            )));
        }
        if fv.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite feature value".into()));
        }
    }
    Ok(())
}

/// Fraction of examples whose argmax prediction equals the label.
pub fn accuracy(params: &MlpParams, data: &[LabeledFeatures]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Invalid("accuracy of an empty set".into()));
    }
    let mut correct = 0usize;
    for (fv, label) in data {
        if argmax_label(&mlp_forward(&fv.values, params)?) == *label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Mini-batch Adam with early stopping on dev accuracy.
///
/// Patience resets only on a strict improvement; the returned parameters
/// are those of the first epoch reaching the best dev accuracy.
pub fn train(
    train: &[LabeledFeatures],
    dev: &[LabeledFeatures],
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    cfg.validate()?;
    let first = train
        .first()
        .ok_or_else(|| Error::Invalid("empty training set".into()))?;
    if dev.is_empty() {
        return Err(Error::Invalid("empty dev set".into()));
    }
    let dim = first.0.values.len();
    let source = first.0.source;
    if dim == 0 {
        return Err(Error::Config("zero-dimensional features".into()));
    }
    check_split(train, dim, source)?;
    check_split(dev, dim, source)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = MlpParams::init(dim, cfg.hidden_size, &mut rng);
    let mut state = AdamState::new(&params);
    let hp = cfg.adam();

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, MlpParams)> = None;
    let mut stale = 0usize;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&[f64], VerificationLabel)> = chunk
                .iter()
                .map(|&i| (train[i].0.values.as_slice(), train[i].1))
                .collect();
            let (_, grads) = loss_and_grad(&batch, &params)?;
            adam_step(&mut params, &grads, &mut state, &hp);
        }
        let acc = accuracy(&params, dev)?;
        history.push(acc);
        match &best {
            Some((_, best_acc, _)) if acc <= *best_acc => {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
            _ => {
                best = Some((epoch, acc, params.clone()));
                stale = 0;
            }
        }
    }

    let (best_epoch, _, params) = best.expect("at least one epoch runs");
    Ok(TrainedModel {
        params,
        config: *cfg,
        best_epoch,
        dev_accuracy_history: history,
        feature_source: source,
    })
}
