//! The same MLP trained on two feature sources: claim/evidence pair
//! features versus a claim-only sentence embedding. The claim-only source
//! never sees the evidence, so it cannot use the cloze model's knowledge.
//!
//! ```text
//! cargo run -p clozecheck --example frozen_encoder_baseline
//! ```

use std::sync::Arc;

use clozecheck::cloze::{fill_mask, MockBackend, MockTable};
use clozecheck::entailment::{
    accuracy, extract_features, FeatureExtractor, HashEncoder, HashEntailment, LabeledFeatures, TrainConfig,
};
use clozecheck::masking::mask_last_token;
use clozecheck::{cloze, Claim, VerificationLabel};

const DIM: usize = 64;

/// Claims whose truth depends on whether the filler equals the gold token:
/// the mock LM "knows" the capital of even-numbered countries only.
fn corpus(range: std::ops::Range<u64>, table: &mut MockTable) -> clozecheck::Result<Vec<Claim>> {
    let mut claims = Vec::new();
    for i in range {
        let text = format!("The capital of Land{i} is City{i}.");
        let filler = if i % 2 == 0 { format!("City{i}") } else { format!("Other{i}") };
        table.insert(format!("The capital of Land{i} is [MASK]."), vec![(filler, 0.5)])?;
        let label = if i % 2 == 0 { VerificationLabel::Supports } else { VerificationLabel::Refutes };
        claims.push(Claim::new(i, text, Some(label)));
    }
    Ok(claims)
}

fn featurize(claims: &[Claim], lm: &MockBackend, fx: &FeatureExtractor) -> clozecheck::Result<Vec<LabeledFeatures>> {
    claims
        .iter()
        .map(|c| {
            let mc = mask_last_token(c)?;
            let ev = fill_mask(&mc, &cloze::query_top1(lm, &mc)?);
            Ok((extract_features(c, &ev, fx, DIM)?, c.gold_label.expect("labeled")))
        })
        .collect()
}

fn main() -> clozecheck::Result<()> {
    let mut table = MockTable::new();
    let train = corpus(0..400, &mut table)?;
    let dev = corpus(400..500, &mut table)?;
    let lm = MockBackend::new(table, None);

    let cfg = TrainConfig {
        learning_rate: 0.01,
        hidden_size: 32,
        max_epochs: 60,
        patience: 10,
        ..TrainConfig::default()
    };
    for fx in [
        FeatureExtractor::entailment(Arc::new(HashEntailment::new(DIM))),
        FeatureExtractor::Encoder(Arc::new(HashEncoder::new(DIM))),
    ] {
        let tr = featurize(&train, &lm, &fx)?;
        let dv = featurize(&dev, &lm, &fx)?;
        let model = clozecheck::entailment::train(&tr, &dv, &cfg)?;
        println!(
            "{:<32} train {:.3}  dev {:.3}",
            fx.id(),
            accuracy(&model.params, &tr)?,
            model.dev_accuracy_history[model.best_epoch]
        );
    }
    Ok(())
}
