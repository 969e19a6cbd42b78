//! Trains the entailment-feature classifier end to end with early stopping,
//! then evaluates it and reloads the saved model.
//!
//! A planted feature backend stands in for a real entailment model: it
//! knows each claim's label and writes a weak signal into its features.
//!
//! ```text
//! cargo run -p clozecheck --example train_classifier
//! ```

use std::fmt::Write as _;
use std::fs;
use std::sync::Arc;

use clozecheck::cloze::{load_mock_table, MockBackend};
use clozecheck::entailment::{FeatureExtractor, PlantedEntailment, TrainConfig};
use clozecheck::masking::LexiconNer;
use clozecheck::pipeline::{self, Backends, ClozeBackendConfig, PipelineConfig};
use clozecheck::{VerificationLabel, VerifierKind};

const DIM: usize = 48;

fn main() -> clozecheck::Result<()> {
    let dir = std::env::temp_dir().join("clozecheck-train");
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).expect("temp dir");

    // three splits of synthetic claims; the mock LM restores every mask
    let mut labels = Vec::new();
    let mut mock = String::new();
    for (split, range) in [("train", 0..450u64), ("dev", 1000..1090), ("test", 2000..2150)] {
        let mut claims = String::new();
        for i in range {
            let label = VerificationLabel::ALL[(i % 3) as usize];
            let text = format!("Person{i} was born in Town{i}.");
            let _ = writeln!(claims, r#"{{"id":{i},"claim":"{text}","label":"{label}"}}"#);
            let _ = writeln!(
                mock,
                r#"{{"masked_text":"Person{i} was born in [MASK].","predictions":[{{"token":"Town{i}","score":0.4}}]}}"#
            );
            labels.push((text, label));
        }
        fs::write(dir.join(format!("{split}.jsonl")), claims).expect("write claims");
    }
    fs::write(dir.join("mock.jsonl"), mock).expect("write table");

    let mut cfg = PipelineConfig::new(
        dir.join("train.jsonl"),
        ClozeBackendConfig::Mock {
            table: dir.join("mock.jsonl"),
            vocab: None,
        },
        dir.join("run"),
    );
    cfg.split = "train".into();
    cfg.dev_dataset = Some(dir.join("dev.jsonl"));
    cfg.verifier = VerifierKind::EntailmentMlp;
    cfg.feature_dim = DIM;
    cfg.train = TrainConfig {
        learning_rate: 0.005,
        hidden_size: 32,
        max_epochs: 80,
        patience: 10,
        ..TrainConfig::default()
    };

    let (table, _) = load_mock_table(dir.join("mock.jsonl"))?;
    let backends = Backends::new(
        Arc::new(MockBackend::new(table, None)),
        Arc::new(LexiconNer::default()),
        Some(FeatureExtractor::entailment(Arc::new(
            PlantedEntailment::new(DIM, labels).with_noise(2.0),
        ))),
    );

    let model = pipeline::run_train(&cfg, &backends)?;
    println!(
        "stopped after {} epochs; best dev accuracy {:.3} at epoch {}",
        model.epochs_run(),
        model.dev_accuracy_history[model.best_epoch],
        model.best_epoch
    );

    let mut eval = cfg.clone();
    eval.dataset = dir.join("test.jsonl");
    eval.split = "test".into();
    let report = pipeline::run_eval(&eval, &backends)?;
    print!("{}", report.to_table());

    let reloaded = pipeline::load_model(&cfg.model_path())?;
    assert_eq!(reloaded.params, model.params);
    println!("model round-trips through {}", cfg.model_path().display());

    // second pass reads every vector from the feature cache
    pipeline::run_train(&cfg, &backends)?;
    println!("feature cache in {}", cfg.cache_dir().display());
    Ok(())
}
