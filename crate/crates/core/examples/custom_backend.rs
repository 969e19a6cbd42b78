//! Plugging in your own cloze backend. Anything implementing
//! [`ClozeBackend`] works with every pipeline stage. A backend that must
//! not be called concurrently (one wrapping a single model session, say)
//! returns false from `concurrency_safe` and its calls are serialized.
//!
//! ```text
//! cargo run -p clozecheck --example custom_backend
//! ```

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use clozecheck::cloze::ClozeBackend;
use clozecheck::masking::LexiconNer;
use clozecheck::pipeline::{run_zero_shot, Backends, ClozeBackendConfig, PipelineConfig};
use clozecheck::{ClozePrediction, Error, Result, MASK};

/// Guesses from the word before the mask, the way a tiny n-gram model
/// might.
struct NgramBackend {
    calls: AtomicUsize,
}

impl ClozeBackend for NgramBackend {
    fn id(&self) -> &str {
        "ngram-demo"
    }

    fn query_topk(&self, masked_text: &str, k: usize) -> Result<Vec<ClozePrediction>> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let before = masked_text.split(MASK).next().unwrap_or_default().trim_end();
        let guesses: &[&str] = match before.rsplit(' ').next() {
            Some("of") => &["Sarawak", "Malaysia"],
            Some("Danny") => &["Boyle", "DeVito"],
            Some("in") => &["1961", "London"],
            Some("a") => &["country", "democracy"],
            _ => return Err(Error::NoPrediction { masked_text: masked_text.into() }),
        };
        Ok(guesses
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, t)| ClozePrediction {
                token: t.to_string(),
                score: 1.0 / (i + 2) as f64,
                rank: i + 1,
            })
            .collect())
    }

    fn vocab_contains(&self, _token: &str) -> bool {
        true
    }

    fn concurrency_safe(&self) -> bool {
        false
    }
}

fn main() -> Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    // the cloze entry in the config is only recorded; the backend below is what runs
    let cfg = PipelineConfig::new(
        fixtures.join("claims.jsonl"),
        ClozeBackendConfig::Remote {
            url: "in-process".into(),
            vocab: None,
        },
        std::env::temp_dir().join("clozecheck-custom"),
    );
    let backend = Arc::new(NgramBackend {
        calls: AtomicUsize::new(0),
    });
    let backends = Backends::new(backend.clone(), Arc::new(LexiconNer::default()), None);

    let report = run_zero_shot(&cfg, &backends)?;
    print!("{}", report.to_table());
    println!("backend called {} times", backend.calls.load(Ordering::Relaxed));
    Ok(())
}
