//! Cloze language-model backends and evidence synthesis.
//!
//! Every backend answers a masked sentence with a rank-ordered list of
//! single-token fillers. [`MockBackend`] serves answers from a lookup table so
//! the whole pipeline runs offline; [`RemoteBackend`] forwards queries to a
//! service speaking the `/v1/predict` wire format.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ClozePrediction, Evidence, MaskedClaim, MASK};
use crate::zeroshot::normalize_token;

pub trait ClozeBackend: Send + Sync {
    /// Stable identifier, used in cache keys and run configs.
    fn id(&self) -> &str;

    /// At most `k` predictions, rank 1 first, scores non-increasing.
    fn query_topk(&self, masked_text: &str, k: usize) -> Result<Vec<ClozePrediction>>;

    /// Membership test on a token already passed through [`normalize_token`].
    fn vocab_contains(&self, token: &str) -> bool;

    fn concurrency_safe(&self) -> bool {
        true
    }
}

/// Top-1 filler for a masked claim.
pub fn query_top1(backend: &dyn ClozeBackend, mc: &MaskedClaim) -> Result<ClozePrediction> {
    let n = mc.masked_text.matches(MASK).count();
    if n != 1 {
        return Err(Error::Invalid(format!(
            "masked sentence must contain exactly one {MASK}, found {n}"
        )));
    }
    backend
        .query_topk(&mc.masked_text, 1)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::NoPrediction {
            masked_text: mc.masked_text.clone(),
        })
}

/// Substitutes the filler for the placeholder. Nothing else changes.
pub fn fill_mask(mc: &MaskedClaim, p: &ClozePrediction) -> Evidence {
    Evidence {
        text: mc.masked_text.replacen(MASK, &p.token, 1),
        filler: p.clone(),
        origin: mc.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WirePrediction {
    pub token: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub masked_text: String,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub predictions: Vec<WirePrediction>,
}

impl PredictResponse {
    pub fn into_ranked(self) -> Vec<ClozePrediction> {
        self.predictions
            .into_iter()
            .enumerate()
            .map(|(i, p)| ClozePrediction {
                token: p.token,
                score: p.score,
                rank: i + 1,
            })
            .collect()
    }
}

impl From<&[ClozePrediction]> for PredictResponse {
    fn from(ps: &[ClozePrediction]) -> Self {
        PredictResponse {
            predictions: ps
                .iter()
                .map(|p| WirePrediction {
                    token: p.token.clone(),
                    score: p.score,
                })
                .collect(),
        }
    }
}

/// Exact-match table from masked sentence to ranked fillers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MockTable {
    entries: HashMap<String, Vec<WirePrediction>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MockLoadSummary {
    pub records: usize,
    pub duplicate_keys: usize,
}

#[derive(Deserialize)]
struct MockRecord {
    masked_text: String,
    predictions: Vec<WirePrediction>,
}

impl MockTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces an entry. Returns whether a previous entry was
    /// replaced. Scores must be finite and non-increasing.
    pub fn insert(
        &mut self,
        masked_text: impl Into<String>,
        predictions: Vec<(String, f64)>,
    ) -> Result<bool> {
        let preds: Vec<WirePrediction> = predictions
            .into_iter()
            .map(|(token, score)| WirePrediction { token, score })
            .collect();
        self.insert_wire(masked_text.into(), preds)
    }

    fn insert_wire(&mut self, masked_text: String, preds: Vec<WirePrediction>) -> Result<bool> {
        if preds.iter().any(|p| !p.score.is_finite() || p.token.is_empty()) {
            return Err(Error::Invalid(format!(
                "non-finite score or empty token for {masked_text:?}"
            )));
        }
        if preds.windows(2).any(|w| w[1].score > w[0].score) {
            return Err(Error::Invalid(format!(
                "scores must be non-increasing in rank for {masked_text:?}"
            )));
        }
        Ok(self.entries.insert(masked_text, preds).is_some())
    }

    pub fn get(&self, masked_text: &str) -> Option<&[WirePrediction]> {
        self.entries.get(masked_text).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn tokens(&self) -> impl Iterator<Item = &str> {
        self.entries
            .values()
            .flat_map(|ps| ps.iter().map(|p| p.token.as_str()))
    }
}

/// Reads `{masked_text, predictions: [{token, score}]}` records. A repeated
/// key replaces the earlier entry and is counted.
pub fn load_mock_table(path: impl AsRef<Path>) -> Result<(MockTable, MockLoadSummary)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut table = MockTable::new();
    let mut summary = MockLoadSummary::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Record {
            line: i + 1,
            message,
        };
        let rec: MockRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        if table
            .insert_wire(rec.masked_text, rec.predictions)
            .map_err(|e| bad(e.to_string()))?
        {
            summary.duplicate_keys += 1;
        }
        summary.records += 1;
    }
    Ok((table, summary))
}

/// Normalized token set, typically read from a one-token-per-line vocab file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary(HashSet<String>);

impl Vocabulary {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).collect())
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(&normalize_token(token))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<S: AsRef<str>> FromIterator<S> for Vocabulary {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Vocabulary(iter.into_iter().map(|s| normalize_token(s.as_ref())).collect())
    }
}

/// Table-driven backend. Its vocabulary is every token the table can emit
/// plus any extra vocabulary supplied.
#[derive(Debug, Clone)]
pub struct MockBackend {
    table: MockTable,
    vocab: Vocabulary,
}

impl MockBackend {
    pub fn new(table: MockTable, extra_vocab: Option<Vocabulary>) -> Self {
        let mut vocab = extra_vocab.unwrap_or_default();
        vocab.0.extend(table.tokens().map(normalize_token));
        MockBackend { table, vocab }
    }

    pub fn table(&self) -> &MockTable {
        &self.table
    }
}

impl ClozeBackend for MockBackend {
    fn id(&self) -> &str {
        "mock"
    }

    fn query_topk(&self, masked_text: &str, k: usize) -> Result<Vec<ClozePrediction>> {
        let preds = self.table.get(masked_text).ok_or_else(|| Error::NoPrediction {
            masked_text: masked_text.to_string(),
        })?;
        Ok(PredictResponse {
            predictions: preds.iter().take(k).cloned().collect(),
        }
        .into_ranked())
    }

    fn vocab_contains(&self, token: &str) -> bool {
        self.vocab.contains(token)
    }
}

/// Client for a service exposing `POST {base}/v1/predict`.
///
/// Uses a blocking HTTP client; call it from a blocking context.
pub struct RemoteBackend {
    base_url: String,
    id: String,
    client: reqwest::blocking::Client,
    vocab: Option<Vocabulary>,
}

impl RemoteBackend {
    pub fn new(base_url: impl Into<String>, vocab: Option<Vocabulary>) -> Result<Self> {
        let base_url = base_url.into().trim_end_matches('/').to_string();
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| Error::Backend(e.to_string()))?;
        Ok(RemoteBackend {
            id: format!("remote:{base_url}"),
            base_url,
            client,
            vocab,
        })
    }
}

#[derive(Deserialize)]
struct ErrorEnvelope {
    error: ErrorBody,
}

#[derive(Deserialize)]
struct ErrorBody {
    code: String,
    message: String,
}

impl ClozeBackend for RemoteBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn query_topk(&self, masked_text: &str, k: usize) -> Result<Vec<ClozePrediction>> {
        let resp = self
            .client
            .post(format!("{}/v1/predict", self.base_url))
            .json(&PredictRequest {
                masked_text: masked_text.to_string(),
                k,
            })
            .send()
            .map_err(|e| Error::Backend(format!("{} unreachable: {e}", self.base_url)))?;
        let status = resp.status();
        let body = resp.text().map_err(|e| Error::Backend(e.to_string()))?;
        if !status.is_success() {
            return match serde_json::from_str::<ErrorEnvelope>(&body) {
                Ok(env) if env.error.code == "no_prediction" => Err(Error::NoPrediction {
                    masked_text: masked_text.to_string(),
                }),
                Ok(env) => Err(Error::Backend(format!("{status}: {}", env.error.message))),
                Err(_) => Err(Error::Backend(format!("{status}: {body}"))),
            };
        }
        let parsed: PredictResponse = serde_json::from_str(&body)
            .map_err(|e| Error::Backend(format!("bad predict response: {e}")))?;
        let mut ranked = parsed.into_ranked();
        ranked.truncate(k);
        Ok(ranked)
    }

    fn vocab_contains(&self, token: &str) -> bool {
        self.vocab.as_ref().is_none_or(|v| v.contains(token))
    }
}

/// Funnels calls through a lock when the wrapped backend is not safe to
/// call concurrently.
pub struct GatedBackend {
    inner: Arc<dyn ClozeBackend>,
    gate: Option<Mutex<()>>,
}

impl GatedBackend {
    pub fn new(inner: Arc<dyn ClozeBackend>) -> Self {
        let gate = (!inner.concurrency_safe()).then(|| Mutex::new(()));
        GatedBackend { inner, gate }
    }
}

impl ClozeBackend for GatedBackend {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn query_topk(&self, masked_text: &str, k: usize) -> Result<Vec<ClozePrediction>> {
        let _guard = self
            .gate
            .as_ref()
            .map(|m| m.lock().unwrap_or_else(|p| p.into_inner()));
        self.inner.query_topk(masked_text, k)
    }

    fn vocab_contains(&self, token: &str) -> bool {
        self.inner.vocab_contains(token)
    }

    fn concurrency_safe(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::mask_last_token;
    use crate::types::Claim;
    use proptest::prelude::*;
    use std::io::Write;

    fn backend(pairs: &[(&str, &[(&str, f64)])]) -> MockBackend {
        let mut t = MockTable::new();
        for (k, ps) in pairs {
            t.insert(*k, ps.iter().map(|(s, v)| (s.to_string(), *v)).collect())
                .unwrap();
        }
        MockBackend::new(t, None)
    }

    fn masked(text: &str) -> MaskedClaim {
        mask_last_token(&Claim::new(1, text, None)).unwrap()
    }

    #[test]
    fn top1_from_mock() {
        let b = backend(&[("Kuching is the capital of [MASK].", &[("Sarawak", 0.9)])]);
        let p = query_top1(&b, &masked("Kuching is the capital of Sarawak.")).unwrap();
        assert_eq!(p, ClozePrediction { token: "Sarawak".into(), score: 0.9, rank: 1 });

        let b = backend(&[("Tim Roth was born in [MASK]", &[("London", 0.8), ("England", 0.1)])]);
        let p = query_top1(&b, &masked("Tim Roth was born in 1961")).unwrap();
        assert_eq!((p.token.as_str(), p.score, p.rank), ("London", 0.8, 1));
    }

    #[test]
    fn unmapped_sentence_is_a_no_prediction_error() {
        let b = backend(&[]);
        let err = query_top1(&b, &masked("Chile is a country.")).unwrap_err();
        match err {
            Error::NoPrediction { masked_text } => assert_eq!(masked_text, "Chile is a [MASK]."),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn fill_mask_changes_only_the_placeholder() {
        let mc = masked("Chile is a country.");
        let p = ClozePrediction { token: "democracy".into(), score: 1.0, rank: 1 };
        assert_eq!(fill_mask(&mc, &p).text, "Chile is a democracy.");

        let mc = masked("x y");
        let p = ClozePrediction { token: "y".into(), score: 1.0, rank: 1 };
        assert_eq!(fill_mask(&mc, &p).text, "x y");
    }

    #[test]
    fn filling_with_gold_reproduces_claim() {
        let mc = masked("Thomas Jefferson founded the University of Virginia after retiring");
        let p = ClozePrediction { token: mc.gold_token.clone(), score: 0.0, rank: 1 };
        assert_eq!(fill_mask(&mc, &p).text, mc.source.text);
    }

    fn table_file(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn loads_table_file() {
        let f = table_file(&[
            r#"{"masked_text":"a [MASK]","predictions":[{"token":"b","score":2.0},{"token":"c","score":1.0}]}"#,
            r#"{"masked_text":"d [MASK]","predictions":[{"token":"e","score":0.5}]}"#,
        ]);
        let (t, s) = load_mock_table(f.path()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(s.duplicate_keys, 0);
    }

    #[test]
    fn duplicate_keys_last_wins() {
        let f = table_file(&[
            r#"{"masked_text":"a [MASK]","predictions":[{"token":"b","score":2.0}]}"#,
            r#"{"masked_text":"a [MASK]","predictions":[{"token":"z","score":1.0}]}"#,
        ]);
        let (t, s) = load_mock_table(f.path()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(s.duplicate_keys, 1);
        assert_eq!(t.get("a [MASK]").unwrap()[0].token, "z");
    }

    #[test]
    fn out_of_order_scores_are_rejected_with_line() {
        let f = table_file(&[
            r#"{"masked_text":"a [MASK]","predictions":[{"token":"b","score":2.0}]}"#,
            r#"{"masked_text":"c [MASK]","predictions":[{"token":"b","score":1.0},{"token":"d","score":3.0}]}"#,
        ]);
        assert!(matches!(load_mock_table(f.path()), Err(Error::Record { line: 2, .. })));
    }

    #[test]
    fn mock_vocab_covers_table_tokens_and_extras() {
        let mut t = MockTable::new();
        t.insert("a [MASK]", vec![("Sarawak".into(), 1.0)]).unwrap();
        let b = MockBackend::new(t, Some(["1961"].into_iter().collect()));
        assert!(b.vocab_contains("sarawak"));
        assert!(b.vocab_contains("1961"));
        assert!(!b.vocab_contains("london"));
    }

    #[test]
    fn gated_backend_delegates() {
        struct Unsafe(MockBackend);
        impl ClozeBackend for Unsafe {
            fn id(&self) -> &str { "unsafe" }
            fn query_topk(&self, m: &str, k: usize) -> Result<Vec<ClozePrediction>> { self.0.query_topk(m, k) }
            fn vocab_contains(&self, t: &str) -> bool { self.0.vocab_contains(t) }
            fn concurrency_safe(&self) -> bool { false }
        }
        let g = GatedBackend::new(Arc::new(Unsafe(backend(&[("a [MASK]", &[("b", 1.0)])]))));
        assert!(g.gate.is_some());
        assert_eq!(g.query_topk("a [MASK]", 3).unwrap().len(), 1);
    }

    fn arb_table() -> impl Strategy<Value = Vec<(String, Vec<(String, f64)>)>> {
        proptest::collection::vec(
            (
                "[a-z]{1,4} \\[MASK\\]",
                proptest::collection::vec(("[a-z]{1,5}", 0.0f64..10.0), 0..6),
            ),
            0..8,
        )
    }

    proptest! {
        #[test]
        fn responses_are_ranked_and_deterministic(entries in arb_table(), k in 1usize..8) {
            let mut t = MockTable::new();
            for (key, mut ps) in entries.clone() {
                ps.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
                t.insert(key, ps).unwrap();
            }
            let b = MockBackend::new(t, None);
            for (key, _) in &entries {
                let r1 = b.query_topk(key, k).unwrap();
                let r2 = b.query_topk(key, k).unwrap();
                prop_assert_eq!(serde_json::to_vec(&r1).unwrap(), serde_json::to_vec(&r2).unwrap());
                prop_assert!(r1.len() <= k);
                for (i, p) in r1.iter().enumerate() {
                    prop_assert_eq!(p.rank, i + 1);
                    prop_assert!(b.vocab_contains(&normalize_token(&p.token)));
                }
                prop_assert!(r1.windows(2).all(|w| w[0].score >= w[1].score));
                if let Some(top) = r1.first() {
                    let mc = MaskedClaim::from_span(
                        &Claim::new(0, key.replace("[MASK]", "q"), None),
                        crate::types::CharSpan::new(key.find('[').unwrap(), key.find('[').unwrap() + 1),
                        crate::types::MaskStrategy::Manual,
                        false,
                    ).unwrap();
                    prop_assert!(!fill_mask(&mc, top).text.contains(MASK));
                }
            }
        }
    }
}
