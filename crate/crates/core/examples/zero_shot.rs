//! Zero-shot verification of the five bundled example claims against a
//! mock prediction table.
//!
//! ```text
//! cargo run -p clozecheck --example zero_shot
//! ```

use std::path::Path;

use clozecheck::pipeline::{run_zero_shot, Backends, ClozeBackendConfig, PipelineConfig};

fn main() -> clozecheck::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let out = std::env::temp_dir().join("clozecheck-zero-shot");

    let mut cfg = PipelineConfig::new(
        fixtures.join("claims.jsonl"),
        ClozeBackendConfig::Mock {
            table: fixtures.join("cloze_mock.jsonl"),
            vocab: Some(fixtures.join("vocab.txt")),
        },
        &out,
    );
    cfg.ner_lexicon = Some(fixtures.join("ner_lexicon.jsonl"));

    let report = run_zero_shot(&cfg, &Backends::from_config(&cfg)?)?;
    for o in &report.per_claim {
        let why = o.category.map_or("", |c| c.as_str());
        println!("claim {}: gold {:<8} predicted {:<8} {why}", o.claim_id, o.gold, o.predicted);
    }
    println!();
    print!("{}", report.to_table());
    println!("\nartifacts in {}", out.display());
    Ok(())
}
