//! Per-class and macro metrics from a confusion matrix.
//!
//! ```text
//! cargo run -p clozecheck --example metrics_report
//! ```

use clozecheck::evaluation::{compute_metrics, f1_score, ConfusionMatrix};
use clozecheck::VerificationLabel::{self, *};

fn main() -> clozecheck::Result<()> {
    // rows are gold labels, columns predictions
    let mut m = ConfusionMatrix::default();
    let cells = [
        (Supports, [46, 3, 1]),
        (Refutes, [20, 19, 11]),
        (Nei, [47, 3, 8]),
    ];
    for (gold, row) in cells {
        for (k, n) in row.into_iter().enumerate() {
            for _ in 0..n {
                m.add(gold, VerificationLabel::from_index(k).expect("three labels"));
            }
        }
    }
    let r = compute_metrics(&m)?;
    println!("accuracy {:.3} over {} claims", r.accuracy, r.total);
    for c in &r.per_class {
        println!(
            "  {:<16} P {:.3}  R {:.3}  F1 {:.3}  support {}",
            c.label, c.precision, c.recall, c.f1, c.support
        );
    }
    println!("  macro            P {:.3}  R {:.3}  F1 {:.3}", r.macro_precision, r.macro_recall, r.macro_f1);

    // F1 from reported precision and recall alone
    println!("\nF1(0.76, 0.38) = {:.2}", f1_score(0.76, 0.38));
    println!("F1(0.58, 0.15) = {:.2}", f1_score(0.58, 0.15));
    Ok(())
}
