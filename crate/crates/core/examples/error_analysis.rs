//! Sorting zero-shot mistakes into error categories.
//!
//! ```text
//! cargo run -p clozecheck --example error_analysis
//! ```

use std::sync::Arc;

use clozecheck::cloze::fill_mask;
use clozecheck::evaluation::{build_report, ErrorAnalyzer};
use clozecheck::masking::{mask_last_token, LexiconNer};
use clozecheck::zeroshot::verify_zero_shot;
use clozecheck::{Claim, ClozePrediction, VerificationLabel};

fn main() -> clozecheck::Result<()> {
    let ner = LexiconNer::new([("London", "GPE"), ("Paris", "GPE"), ("Tim Roth", "PERSON")]);
    let analyzer = ErrorAnalyzer::new(Arc::new(ner)).with_generic_prefixes(["is a", "was a", "became a"]);

    // (claim, what the LM filled in)
    let cases = [
        ("Tim Roth was born in 1961", "London"),
        ("Chile is a country.", "democracy"),
        ("Seohyun sings.", "Park"),
        ("The Eiffel Tower is located in Paris.", "France"),
        ("Kuching is the capital of Sarawak.", "Sarawak"),
        ("Marie Curie became a physicist.", "chemist"),
    ];
    let mut pairs = Vec::new();
    for (i, (text, filler)) in cases.iter().enumerate() {
        let claim = Claim::new(i as u64 + 1, *text, Some(VerificationLabel::Supports));
        let mc = mask_last_token(&claim)?;
        let p = ClozePrediction {
            token: filler.to_string(),
            score: 0.5,
            rank: 1,
        };
        println!("{:<40} -> {}", mc.masked_text, fill_mask(&mc, &p).text);
        pairs.push((verify_zero_shot(&mc, &p), claim.gold_label));
    }

    let report = build_report(&pairs, &analyzer)?;
    println!();
    for o in report.per_claim.iter().filter(|o| o.gold != o.predicted) {
        println!("claim {}: {}", o.claim_id, o.category.map_or("-", |c| c.as_str()));
    }
    println!("{} of {} wrong", report.misclassified(), report.per_claim.len());
    Ok(())
}
