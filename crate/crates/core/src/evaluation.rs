//! Confusion-matrix metrics and error categorization.
//!
//! Precision or recall with a zero denominator is reported as 0, and F1 is 0
//! when precision + recall is 0.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masking::{entity_label_at, tokenize_surface, LexiconNer, NerBackend};
use crate::types::{
    CharSpan, Claim, ClozePrediction, MaskedClaim, Verdict, VerificationLabel, MASK,
};

pub const ZERO_DENOMINATOR_NOTE: &str =
    "precision/recall with a zero denominator are reported as 0; F1 is 0 when P+R = 0";

/// Rows are gold labels, columns predictions, both in label order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn add(&mut self, gold: VerificationLabel, predicted: VerificationLabel) {
        self.counts[gold.index()][predicted.index()] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (row, orow) in self.counts.iter_mut().zip(&other.counts) {
            for (c, o) in row.iter_mut().zip(orow) {
                *c += o;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    /// The same matrix with the gold rows of `labels` kept and every other
    /// gold row zeroed.
    pub fn restricted_to_gold(&self, labels: &[VerificationLabel]) -> ConfusionMatrix {
        let mut m = *self;
        for l in VerificationLabel::ALL {
            if !labels.contains(&l) {
                m.counts[l.index()] = [0; 3];
            }
        }
        m
    }
}

pub fn build_confusion(pairs: &[(Verdict, Option<VerificationLabel>)]) -> Result<ConfusionMatrix> {
    let mut m = ConfusionMatrix::default();
    for (v, gold) in pairs {
        let gold = gold.ok_or_else(|| {
            Error::Invalid(format!("claim {} has no gold label to score against", v.claim_id))
        })?;
        m.add(gold, v.predicted);
    }
    Ok(m)
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: VerificationLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub total: u64,
}

impl MetricsReport {
    pub fn class(&self, label: VerificationLabel) -> Option<&ClassMetrics> {
        self.per_class.iter().find(|c| c.label == label)
    }
}

/// All three classes, macro-averaged over all three.
pub fn compute_metrics(m: &ConfusionMatrix) -> Result<MetricsReport> {
    compute_metrics_over(m, &VerificationLabel::ALL)
}

/// Per-class metrics for `labels` only; macro values average over them.
pub fn compute_metrics_over(
    m: &ConfusionMatrix,
    labels: &[VerificationLabel],
) -> Result<MetricsReport> {
    let total = m.total();
    if total == 0 {
        return Err(Error::Invalid("cannot compute metrics of an empty confusion matrix".into()));
    }
    if labels.is_empty() {
        return Err(Error::Invalid("no labels to report".into()));
    }
    let per_class: Vec<ClassMetrics> = labels
        .iter()
        .map(|&l| {
            let k = l.index();
            let tp = m.counts[k][k];
            let predicted: u64 = (0..3).map(|g| m.counts[g][k]).sum();
            let support: u64 = m.counts[k].iter().sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            ClassMetrics {
                label: l,
                precision,
                recall,
                f1: f1_score(precision, recall),
                support,
            }
        })
        .collect();
    let n = per_class.len() as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / n;
    Ok(MetricsReport {
        accuracy: ratio(m.correct(), total),
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        macro_f1: mean(|c| c.f1),
        total,
        per_class,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCategory {
    EntityTypeBias,
    GenericPrefix,
    ShortClaim,
    Other,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 4] = [
        ErrorCategory::EntityTypeBias,
        ErrorCategory::GenericPrefix,
        ErrorCategory::ShortClaim,
        ErrorCategory::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::EntityTypeBias => "ENTITY_TYPE_BIAS",
            ErrorCategory::GenericPrefix => "GENERIC_PREFIX",
            ErrorCategory::ShortClaim => "SHORT_CLAIM",
            ErrorCategory::Other => "OTHER",
        }
    }
}

/// Claims shorter than this many surface tokens count as short.
pub const SHORT_CLAIM_TOKENS: usize = 5;

pub const DEFAULT_GENERIC_PREFIXES: [&str; 4] = ["is a", "was a", "is an", "was an"];

/// Assigns misclassified claims to one of the [`ErrorCategory`] buckets.
///
/// Rules in order, first match wins: fewer than five surface tokens;
/// gold and predicted fillers are both entities of different categories;
/// the two tokens before the mask form a generic prefix; otherwise other.
#[derive(Clone)]
pub struct ErrorAnalyzer {
    ner: Arc<dyn NerBackend>,
    generic_prefixes: Vec<String>,
}

impl Default for ErrorAnalyzer {
    fn default() -> Self {
        Self::new(Arc::new(LexiconNer::default()))
    }
}

impl ErrorAnalyzer {
    pub fn new(ner: Arc<dyn NerBackend>) -> Self {
        ErrorAnalyzer {
            ner,
            generic_prefixes: DEFAULT_GENERIC_PREFIXES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn with_generic_prefixes<S: AsRef<str>>(mut self, prefixes: impl IntoIterator<Item = S>) -> Self {
        self.generic_prefixes = prefixes
            .into_iter()
            .map(|p| p.as_ref().split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase())
            .collect();
        self
    }

    /// `None` when the prediction is correct.
    pub fn classify_error(
        &self,
        claim: &Claim,
        mc: &MaskedClaim,
        p: &ClozePrediction,
        gold: VerificationLabel,
        predicted: VerificationLabel,
    ) -> Option<ErrorCategory> {
        if gold == predicted {
            return None;
        }
        if tokenize_surface(&claim.text).len() < SHORT_CLAIM_TOKENS {
            return Some(ErrorCategory::ShortClaim);
        }
        if self.entity_types_differ(claim, mc, p) {
            return Some(ErrorCategory::EntityTypeBias);
        }
        if self.has_generic_prefix(mc) {
            return Some(ErrorCategory::GenericPrefix);
        }
        Some(ErrorCategory::Other)
    }

    fn entity_types_differ(&self, claim: &Claim, mc: &MaskedClaim, p: &ClozePrediction) -> bool {
        let ner = self.ner.as_ref();
        // An NER failure counts as "not recognized".
        let gold = entity_label_at(ner, &claim.text, mc.mask_char_span).ok().flatten();
        let filled = mc.masked_text.replacen(MASK, &p.token, 1);
        let start = mc.mask_start();
        let span = CharSpan::new(start, start + p.token.chars().count());
        let pred = entity_label_at(ner, &filled, span).ok().flatten();
        matches!((gold, pred), (Some(g), Some(q)) if g != q)
    }

    fn has_generic_prefix(&self, mc: &MaskedClaim) -> bool {
        let tokens = tokenize_surface(&mc.masked_text);
        let Some(pos) = tokens.iter().position(|t| t.text == MASK) else {
            return false;
        };
        if pos < 2 {
            return false;
        }
        let prefix = format!("{} {}", tokens[pos - 2].text, tokens[pos - 1].text).to_lowercase();
        self.generic_prefixes.contains(&prefix)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimOutcome {
    pub claim_id: u64,
    pub gold: VerificationLabel,
    pub predicted: VerificationLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<ErrorCategory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub matrix: ConfusionMatrix,
    pub metrics: MetricsReport,
    /// SUPPORTS/REFUTES golds only, averaged over those two classes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binary_metrics: Option<MetricsReport>,
    pub error_counts: BTreeMap<ErrorCategory, usize>,
    /// Claims left out of scoring, by reason.
    #[serde(default)]
    pub skipped: BTreeMap<String, usize>,
    pub notes: Vec<String>,
    pub per_claim: Vec<ClaimOutcome>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
enum ReportRecord {
    Summary {
        matrix: ConfusionMatrix,
        metrics: MetricsReport,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        binary_metrics: Option<MetricsReport>,
        error_counts: BTreeMap<ErrorCategory, usize>,
        #[serde(default)]
        skipped: BTreeMap<String, usize>,
        notes: Vec<String>,
    },
    Claim(ClaimOutcome),
}

/// Scores verdicts against gold labels and categorizes the errors. Error
/// categories need the verdict's evidence; verdicts without it count as
/// [`ErrorCategory::Other`].
pub fn build_report(
    pairs: &[(Verdict, Option<VerificationLabel>)],
    analyzer: &ErrorAnalyzer,
) -> Result<EvaluationReport> {
    let matrix = build_confusion(pairs)?;
    let metrics = compute_metrics(&matrix)?;
    let mut error_counts = BTreeMap::new();
    let mut per_claim = Vec::with_capacity(pairs.len());
    for (v, gold) in pairs {
        let gold = gold.expect("checked by build_confusion");
        let category = if gold == v.predicted {
            None
        } else {
            let c = v
                .evidence
                .as_ref()
                .and_then(|ev| {
                    analyzer.classify_error(&ev.origin.source, &ev.origin, &ev.filler, gold, v.predicted)
                })
                .unwrap_or(ErrorCategory::Other);
            *error_counts.entry(c).or_insert(0) += 1;
            Some(c)
        };
        per_claim.push(ClaimOutcome {
            claim_id: v.claim_id,
            gold,
            predicted: v.predicted,
            category,
        });
    }
    Ok(EvaluationReport {
        matrix,
        metrics,
        binary_metrics: None,
        error_counts,
        skipped: BTreeMap::new(),
        notes: vec![ZERO_DENOMINATOR_NOTE.to_string()],
        per_claim,
    })
}

impl EvaluationReport {
    /// Adds metrics restricted to SUPPORTS/REFUTES golds, when any exist.
    pub fn with_binary_metrics(mut self) -> Self {
        let binary = [VerificationLabel::Supports, VerificationLabel::Refutes];
        let m = self.matrix.restricted_to_gold(&binary);
        self.binary_metrics = compute_metrics_over(&m, &binary).ok();
        self
    }

    pub fn misclassified(&self) -> usize {
        self.per_claim.iter().filter(|c| c.gold != c.predicted).count()
    }

    pub fn write_records(&self, mut out: impl Write) -> Result<()> {
        let summary = ReportRecord::Summary {
            matrix: self.matrix,
            metrics: self.metrics.clone(),
            binary_metrics: self.binary_metrics.clone(),
            error_counts: self.error_counts.clone(),
            skipped: self.skipped.clone(),
            notes: self.notes.clone(),
        };
        let io = |e| Error::io("<report>", e);
        serde_json::to_writer(&mut out, &summary)?;
        out.write_all(b"\n").map_err(io)?;
        for c in &self.per_claim {
            serde_json::to_writer(&mut out, &ReportRecord::Claim(c.clone()))?;
            out.write_all(b"\n").map_err(io)?;
        }
        Ok(())
    }

    pub fn read_records(input: impl BufRead) -> Result<Self> {
        let mut summary = None;
        let mut per_claim = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<report>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ReportRecord = serde_json::from_str(&line).map_err(|e| Error::Record {
                line: i + 1,
                message: e.to_string(),
            })?;
            match rec {
                ReportRecord::Summary { .. } if summary.is_some() => {
                    return Err(Error::Record { line: i + 1, message: "second summary record".into() })
                }
                s @ ReportRecord::Summary { .. } => summary = Some(s),
                ReportRecord::Claim(c) => per_claim.push(c),
            }
        }
        match summary {
            Some(ReportRecord::Summary { matrix, metrics, binary_metrics, error_counts, skipped, notes }) => {
                Ok(EvaluationReport { matrix, metrics, binary_metrics, error_counts, skipped, notes, per_claim })
            }
            _ => Err(Error::Invalid("report has no summary record".into())),
        }
    }

    /// Plain-text table with one row per label and the pooled columns on
    /// the first row.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        table_block(&mut s, "all golds", &self.metrics);
        if let Some(b) = &self.binary_metrics {
            s.push('\n');
            table_block(&mut s, "SUPPORTS/REFUTES golds", b);
        }
        if !self.error_counts.is_empty() {
            s.push_str("\nerrors by category\n");
            for (c, n) in &self.error_counts {
                let _ = writeln!(s, "  {:<18} {n}", c.as_str());
            }
        }
        for (why, n) in &self.skipped {
            let _ = writeln!(s, "skipped ({why}): {n}");
        }
        for note in &self.notes {
            let _ = writeln!(s, "note: {note}");
        }
        s
    }

    /// Spreadsheet export: one row per label.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Invalid(e.to_string());
        w.write_record([
            "scope", "label", "prec", "recall", "f1", "support", "accuracy", "macro_prec",
            "macro_recall", "macro_f1",
        ])
        .map_err(err)?;
        let scopes = std::iter::once(("all", &self.metrics))
            .chain(self.binary_metrics.as_ref().map(|b| ("binary", b)));
        for (scope, m) in scopes {
            for c in &m.per_class {
                w.write_record([
                    scope.to_string(),
                    c.label.to_string(),
                    c.precision.to_string(),
                    c.recall.to_string(),
                    c.f1.to_string(),
                    c.support.to_string(),
                    m.accuracy.to_string(),
                    m.macro_precision.to_string(),
                    m.macro_recall.to_string(),
                    m.macro_f1.to_string(),
                ])
                .map_err(err)?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    }
}

fn table_block(s: &mut String, title: &str, m: &MetricsReport) {
    let _ = writeln!(s, "{title} (n = {})", m.total);
    let _ = writeln!(
        s,
        "{:<16} {:>6} {:>6} {:>6} {:>8} {:>10} {:>12} {:>8}",
        "Label", "prec", "recall", "f1", "accuracy", "macro prec", "macro recall", "macro f1"
    );
    for (i, c) in m.per_class.iter().enumerate() {
        let pooled = if i == 0 {
            format!(
                "{:>8.2} {:>10.2} {:>12.2} {:>8.2}",
                m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1
            )
        } else {
            String::new()
        };
        let _ = writeln!(
            s,
            "{:<16} {:>6.2} {:>6.2} {:>6.2} {pooled}",
            c.label.as_str(),
            c.precision,
            c.recall,
            c.f1
        );
    }
}
