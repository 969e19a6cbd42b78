//! The three ways to choose the masked token.
//!
//! ```text
//! cargo run -p clozecheck --example masking_strategies
//! ```

use std::sync::Arc;

use clozecheck::masking::{apply_manual_mask, tokenize_surface, LexiconNer, Masker};
use clozecheck::{Claim, MaskStrategy};

fn main() -> clozecheck::Result<()> {
    let ner = Arc::new(LexiconNer::new([
        ("Danny Boyle", "PERSON"),
        ("Tim Roth", "PERSON"),
        ("Chile", "GPE"),
        ("Kuching", "GPE"),
        ("Sarawak", "GPE"),
    ]));
    let last_token = Masker::new(MaskStrategy::LastToken, None);
    let last_entity = Masker::new(MaskStrategy::LastEntity, Some(ner));

    let claims = [
        "Kuching is the capital of Sarawak.",
        "The Beach's director was Danny Boyle.",
        "Tim Roth was born in 1961",
        "Chile is a country.",
        "Seohyun sings.",
    ];
    for (i, text) in claims.iter().enumerate() {
        let claim = Claim::new(i as u64 + 1, *text, None);
        let a = last_token.mask(&claim)?;
        let b = last_entity.mask(&claim)?;
        println!("{text}");
        println!("  last token : {:<40} gold {:?}", a.masked_text, a.gold_token);
        println!(
            "  last entity: {:<40} gold {:?}{}",
            b.masked_text,
            b.gold_token,
            if b.fallback_used { " (no entity, fell back)" } else { "" }
        );
    }

    // manual masking picks a surface token by index, as a person would
    let claim = Claim::new(9, "Thomas Jefferson founded the University of Virginia.", None);
    for (i, t) in tokenize_surface(&claim.text).iter().enumerate() {
        print!("{i}:{} ", t.text);
    }
    println!();
    let m = apply_manual_mask(&claim, 6)?;
    println!("  manual 6   : {} gold {:?}", m.masked_text, m.gold_token);
    Ok(())
}
