//! Batch runs over a claim file: zero-shot verification, feature
//! extraction, training and evaluation of the entailment classifier, and
//! error analysis of stored verdicts.
//!
//! Every run writes its [`PipelineConfig`] as `config.json` next to its
//! outputs, so rerunning from that file reproduces the run.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cloze::{load_mock_table, query_top1, fill_mask, ClozeBackend, GatedBackend, MockBackend, RemoteBackend, Vocabulary};
use crate::dataset::{filter_by_vocab, load_claimset, ClaimSet, LoadSummary};
use crate::entailment::{
    extract_features, input_key, predict_features, read_model, train, write_model, FeatureCache,
    FeatureExtractor, FeatureVector, HashEncoder, HashEntailment, PairOrientation, TrainConfig,
    TrainedModel, DEFAULT_FEATURE_DIM,
};
use crate::error::{Error, Result};
use crate::evaluation::{build_report, ErrorAnalyzer, EvaluationReport, DEFAULT_GENERIC_PREFIXES};
use crate::masking::{LexiconNer, Masker, NerBackend, StreamNer};
use crate::types::{Claim, Evidence, MaskStrategy, MaskedClaim, Verdict, VerificationLabel, VerifierKind};
use crate::zeroshot::{verify_zero_shot_with, MatchMode};

/// Environment variable overriding the remote cloze endpoint.
pub const BACKEND_URL_ENV: &str = "CLOZECHECK_BACKEND_URL";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClozeBackendConfig {
    Mock {
        table: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        vocab: Option<PathBuf>,
    },
    Remote {
        url: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        vocab: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureBackendConfig {
    #[default]
    HashEntailment,
    /// Claim-only sentence embedding: the frozen-encoder baseline.
    HashEncoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub dataset: PathBuf,
    pub split: String,
    /// Dev split used for early stopping when training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev_dataset: Option<PathBuf>,
    pub masking: MaskStrategy,
    pub cloze: ClozeBackendConfig,
    /// Gazetteer for the lexicon NER; without one only years are tagged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ner_lexicon: Option<PathBuf>,
    /// External NER process (program and arguments) speaking the
    /// line-JSON protocol of [`StreamNer`]; takes precedence over the
    /// lexicon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ner_command: Option<Vec<String>>,
    pub verifier: VerifierKind,
    #[serde(default)]
    pub match_mode: MatchMode,
    #[serde(default)]
    pub features: FeatureBackendConfig,
    #[serde(default)]
    pub orientation: PairOrientation,
    pub feature_dim: usize,
    pub train: TrainConfig,
    pub generic_prefixes: Vec<String>,
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_path: Option<PathBuf>,
    /// Overrides `train.seed`.
    pub seed: u64,
}

impl PipelineConfig {
    pub fn new(dataset: impl Into<PathBuf>, cloze: ClozeBackendConfig, output_dir: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            dataset: dataset.into(),
            split: "dev".into(),
            dev_dataset: None,
            masking: MaskStrategy::LastToken,
            cloze,
            ner_lexicon: None,
            ner_command: None,
            verifier: VerifierKind::ZeroShot,
            match_mode: MatchMode::Normalized,
            features: FeatureBackendConfig::HashEntailment,
            orientation: PairOrientation::EvidenceEntailsClaim,
            feature_dim: DEFAULT_FEATURE_DIM,
            train: TrainConfig::default(),
            generic_prefixes: DEFAULT_GENERIC_PREFIXES.iter().map(|s| s.to_string()).collect(),
            output_dir: output_dir.into(),
            cache_dir: None,
            model_path: None,
            seed: 0,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train
        }
    }

    pub fn model_path(&self) -> PathBuf {
        self.model_path
            .clone()
            .unwrap_or_else(|| self.output_dir.join("model.bin"))
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir
            .clone()
            .unwrap_or_else(|| self.output_dir.join("feature-cache"))
    }

    /// Applies [`BACKEND_URL_ENV`] to a remote backend config.
    pub fn apply_env_overrides(&mut self) {
        if let (ClozeBackendConfig::Remote { url, .. }, Ok(env)) =
            (&mut self.cloze, std::env::var(BACKEND_URL_ENV))
        {
            if !env.is_empty() {
                *url = env;
            }
        }
    }
}

/// The runtime backends a run uses.
#[derive(Clone)]
pub struct Backends {
    pub cloze: Arc<dyn ClozeBackend>,
    pub ner: Arc<dyn NerBackend>,
    pub features: Option<FeatureExtractor>,
}

impl Backends {
    pub fn new(cloze: Arc<dyn ClozeBackend>, ner: Arc<dyn NerBackend>, features: Option<FeatureExtractor>) -> Self {
        Backends {
            cloze: Arc::new(GatedBackend::new(cloze)),
            ner,
            features,
        }
    }

    pub fn from_config(cfg: &PipelineConfig) -> Result<Self> {
        let load_vocab = |v: &Option<PathBuf>| v.as_ref().map(Vocabulary::load).transpose();
        let cloze: Arc<dyn ClozeBackend> = match &cfg.cloze {
            ClozeBackendConfig::Mock { table, vocab } => {
                let (table, _) = load_mock_table(table)?;
                Arc::new(MockBackend::new(table, load_vocab(vocab)?))
            }
            ClozeBackendConfig::Remote { url, vocab } => Arc::new(RemoteBackend::new(url.clone(), load_vocab(vocab)?)?),
        };
        let ner: Arc<dyn NerBackend> = match (&cfg.ner_command, &cfg.ner_lexicon) {
            (Some(cmd), _) => {
                let (prog, args) = cmd
                    .split_first()
                    .ok_or_else(|| Error::Config("empty NER command".into()))?;
                Arc::new(StreamNer::spawn(Command::new(prog).args(args))?)
            }
            (None, Some(p)) => Arc::new(LexiconNer::load(p)?),
            (None, None) => Arc::new(LexiconNer::default()),
        };
        if cfg.feature_dim < 4 {
            return Err(Error::Config(format!("feature dimension {} is too small", cfg.feature_dim)));
        }
        let features = match cfg.features {
            FeatureBackendConfig::HashEntailment => FeatureExtractor::Entailment {
                backend: Arc::new(HashEntailment::new(cfg.feature_dim)),
                orientation: cfg.orientation,
            },
            FeatureBackendConfig::HashEncoder => FeatureExtractor::Encoder(Arc::new(HashEncoder::new(cfg.feature_dim))),
        };
        Ok(Self::new(cloze, ner, Some(features)))
    }

    fn extractor(&self) -> Result<&FeatureExtractor> {
        self.features
            .as_ref()
            .ok_or_else(|| Error::Config("no feature backend configured".into()))
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(io_err(path))
}

fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn prepare_output(cfg: &PipelineConfig) -> Result<()> {
    fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
    cfg.save(cfg.output_dir.join("config.json"))
}

/// Writes `report.jsonl`, `report.txt` and `report.csv` into `dir`.
pub fn write_report(dir: &Path, report: &EvaluationReport) -> Result<()> {
    let p = dir.join("report.jsonl");
    let mut w = BufWriter::new(File::create(&p).map_err(io_err(&p))?);
    report.write_records(&mut w)?;
    w.flush().map_err(io_err(&p))?;
    let p = dir.join("report.txt");
    fs::write(&p, report.to_table()).map_err(io_err(&p))?;
    let p = dir.join("report.csv");
    report.write_csv(BufWriter::new(File::create(&p).map_err(io_err(&p))?))
}

fn analyzer(cfg: &PipelineConfig, backends: &Backends) -> ErrorAnalyzer {
    ErrorAnalyzer::new(backends.ner.clone()).with_generic_prefixes(&cfg.generic_prefixes)
}

fn bump(map: &mut BTreeMap<String, usize>, key: &str, n: usize) {
    if n > 0 {
        *map.entry(key.to_string()).or_insert(0) += n;
    }
}

/// Loads a claim file and writes it back in normalized record form along
/// with `ingest-summary.json`.
pub fn run_ingest(path: &Path, split: &str, output_dir: &Path) -> Result<(ClaimSet, LoadSummary)> {
    let (set, summary) = load_claimset(path, split)?;
    fs::create_dir_all(output_dir).map_err(io_err(output_dir))?;
    let out = output_dir.join(format!("{split}.jsonl"));
    let mut w = BufWriter::new(File::create(&out).map_err(io_err(&out))?);
    set.write_records(&mut w).map_err(io_err(&out))?;
    w.flush().map_err(io_err(&out))?;
    write_json(&output_dir.join("ingest-summary.json"), &summary)?;
    Ok((set, summary))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MaskSummary {
    pub masked: usize,
    pub unmaskable: usize,
    pub fallback_used: usize,
}

/// Masks every claim of the configured dataset into `masked.jsonl`.
pub fn run_mask(cfg: &PipelineConfig, backends: &Backends) -> Result<(Vec<MaskedClaim>, MaskSummary)> {
    prepare_output(cfg)?;
    let (set, _) = load_claimset(&cfg.dataset, &cfg.split)?;
    let masker = Masker::new(cfg.masking, Some(backends.ner.clone()));
    let mut out = Vec::new();
    let mut summary = MaskSummary::default();
    for claim in &set {
        match masker.mask(claim) {
            Ok(mc) => {
                summary.fallback_used += usize::from(mc.fallback_used);
                out.push(mc);
            }
            Err(Error::Unmaskable { .. }) => summary.unmaskable += 1,
            Err(e) => return Err(e),
        }
    }
    summary.masked = out.len();
    write_lines(&cfg.output_dir.join("masked.jsonl"), &out)?;
    write_json(&cfg.output_dir.join("mask-summary.json"), &summary)?;
    Ok((out, summary))
}

/// Mask, query top-1, token-match, report. Vocabulary filtering runs first.
/// Claims without a prediction or a gold label are counted under
/// `skipped`, not fatal.
pub fn run_zero_shot(cfg: &PipelineConfig, backends: &Backends) -> Result<EvaluationReport> {
    prepare_output(cfg)?;
    let (set, load) = load_claimset(&cfg.dataset, &cfg.split)?;
    let masker = Masker::new(cfg.masking, Some(backends.ner.clone()));
    let cloze = backends.cloze.as_ref();
    let filtered = filter_by_vocab(&set, &masker, |t| cloze.vocab_contains(t));
    if filtered.retained.is_empty() {
        return Err(Error::Invalid("no claims after filtering".into()));
    }

    let mut skipped = BTreeMap::new();
    bump(&mut skipped, "malformed_record", load.skipped);
    bump(&mut skipped, "not_in_vocab", filtered.removed_vocab);
    bump(&mut skipped, "unmaskable", filtered.removed_unmaskable);

    let mut pairs = Vec::new();
    for claim in &filtered.retained {
        let Some(gold) = claim.gold_label else {
            bump(&mut skipped, "unlabeled", 1);
            continue;
        };
        let mc = masker.mask(claim)?;
        let p = match query_top1(cloze, &mc) {
            Ok(p) => p,
            Err(Error::NoPrediction { .. }) => {
                bump(&mut skipped, "no_prediction", 1);
                continue;
            }
            Err(e) => return Err(e),
        };
        pairs.push((verify_zero_shot_with(&mc, &p, cfg.match_mode), Some(gold)));
    }
    if pairs.is_empty() {
        return Err(Error::Invalid("no claims could be scored".into()));
    }

    let mut report = build_report(&pairs, &analyzer(cfg, backends))?.with_binary_metrics();
    report.skipped = skipped;
    let verdicts: Vec<&Verdict> = pairs.iter().map(|(v, _)| v).collect();
    write_lines(&cfg.output_dir.join("verdicts.jsonl"), &verdicts)?;
    write_report(&cfg.output_dir, &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturizedClaim {
    pub claim: Claim,
    pub evidence: Evidence,
    pub features: FeatureVector,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeaturizedSplit {
    pub items: Vec<FeaturizedClaim>,
    pub skipped: BTreeMap<String, usize>,
}

impl FeaturizedSplit {
    /// Labeled items as training pairs.
    pub fn labeled(&self) -> Vec<(FeatureVector, VerificationLabel)> {
        self.items
            .iter()
            .filter_map(|it| it.claim.gold_label.map(|l| (it.features.clone(), l)))
            .collect()
    }
}

fn cache_key(cfg: &PipelineConfig, backends: &Backends, extractor: &FeatureExtractor) -> String {
    format!(
        "{}|cloze={}|mask={:?}",
        extractor.id(),
        backends.cloze.id(),
        cfg.masking
    )
}

/// Mask, fill, and extract features for every claim of `set`, reusing
/// cached vectors.
pub fn featurize(set: &ClaimSet, cfg: &PipelineConfig, backends: &Backends) -> Result<FeaturizedSplit> {
    let extractor = backends.extractor()?;
    if extractor.dim() != cfg.feature_dim {
        return Err(Error::Config(format!(
            "feature backend gives {} dimensions, run is configured for {}",
            extractor.dim(),
            cfg.feature_dim
        )));
    }
    let mut cache = FeatureCache::open(cfg.cache_dir(), &cache_key(cfg, backends, extractor), cfg.feature_dim)?;
    let masker = Masker::new(cfg.masking, Some(backends.ner.clone()));
    let mut out = FeaturizedSplit::default();
    for claim in set {
        let mc = match masker.mask(claim) {
            Ok(mc) => mc,
            Err(Error::Unmaskable { .. }) => {
                bump(&mut out.skipped, "unmaskable", 1);
                continue;
            }
            Err(e) => return Err(e),
        };
        let p = match query_top1(backends.cloze.as_ref(), &mc) {
            Ok(p) => p,
            Err(Error::NoPrediction { .. }) => {
                bump(&mut out.skipped, "no_prediction", 1);
                continue;
            }
            Err(e) => return Err(e),
        };
        let evidence = fill_mask(&mc, &p);
        let input = input_key(&claim.text, &evidence.text);
        let features = cache.get_or_try_insert_with(claim.id, input, || {
            extract_features(claim, &evidence, extractor, cfg.feature_dim)
        })?;
        if features.source != extractor.source() {
            return Err(Error::Config("cached features come from a different source".into()));
        }
        out.items.push(FeaturizedClaim {
            claim: claim.clone(),
            evidence,
            features,
        });
    }
    Ok(out)
}

/// Featurizes the configured dataset and writes `features.jsonl`.
pub fn run_extract_features(cfg: &PipelineConfig, backends: &Backends) -> Result<FeaturizedSplit> {
    prepare_output(cfg)?;
    let (set, _) = load_claimset(&cfg.dataset, &cfg.split)?;
    let split = featurize(&set, cfg, backends)?;
    #[derive(Serialize)]
    struct Row<'a> {
        claim_id: u64,
        label: Option<VerificationLabel>,
        evidence: &'a str,
        features: &'a FeatureVector,
    }
    let rows: Vec<Row> = split
        .items
        .iter()
        .map(|it| Row {
            claim_id: it.claim.id,
            label: it.claim.gold_label,
            evidence: &it.evidence.text,
            features: &it.features,
        })
        .collect();
    write_lines(&cfg.output_dir.join("features.jsonl"), &rows)?;
    Ok(split)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrainSummary {
    train_examples: usize,
    dev_examples: usize,
    best_epoch: usize,
    epochs_run: usize,
    best_dev_accuracy: f64,
    dev_accuracy_history: Vec<f64>,
    skipped_train: BTreeMap<String, usize>,
    skipped_dev: BTreeMap<String, usize>,
}

/// Trains the classifier on `dataset` with early stopping on
/// `dev_dataset`, and writes the model and `train-summary.json`.
pub fn run_train(cfg: &PipelineConfig, backends: &Backends) -> Result<TrainedModel> {
    let dev_path = cfg
        .dev_dataset
        .as_ref()
        .ok_or_else(|| Error::Config("training needs a dev dataset for early stopping".into()))?;
    prepare_output(cfg)?;
    let (train_set, _) = load_claimset(&cfg.dataset, &cfg.split)?;
    let (dev_set, _) = load_claimset(dev_path, "dev")?;
    let tr = featurize(&train_set, cfg, backends)?;
    let dv = featurize(&dev_set, cfg, backends)?;
    let (tr_pairs, dv_pairs) = (tr.labeled(), dv.labeled());
    let model = train(&tr_pairs, &dv_pairs, &cfg.train_config())?;

    let path = cfg.model_path();
    let file = File::create(&path).map_err(io_err(&path))?;
    write_model(&model, BufWriter::new(file))?;
    write_json(
        &cfg.output_dir.join("train-summary.json"),
        &TrainSummary {
            train_examples: tr_pairs.len(),
            dev_examples: dv_pairs.len(),
            best_epoch: model.best_epoch,
            epochs_run: model.epochs_run(),
            best_dev_accuracy: model.dev_accuracy_history[model.best_epoch],
            dev_accuracy_history: model.dev_accuracy_history.clone(),
            skipped_train: tr.skipped,
            skipped_dev: dv.skipped,
        },
    )?;
    Ok(model)
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let file = File::open(path).map_err(io_err(path))?;
    read_model(BufReader::new(file))
}

/// Scores the configured dataset with a trained model.
pub fn run_eval(cfg: &PipelineConfig, backends: &Backends) -> Result<EvaluationReport> {
    let model = load_model(&cfg.model_path())?;
    if model.input_dim() != cfg.feature_dim {
        return Err(Error::Config(format!(
            "model expects {}-dimensional features, run is configured for {}",
            model.input_dim(),
            cfg.feature_dim
        )));
    }
    let extractor = backends.extractor()?;
    if extractor.source() != model.feature_source {
        return Err(Error::Config(format!(
            "model was trained on {:?} features, backend gives {:?}",
            model.feature_source,
            extractor.source()
        )));
    }
    prepare_output(cfg)?;
    let (set, load) = load_claimset(&cfg.dataset, &cfg.split)?;
    let split = featurize(&set, cfg, backends)?;
    let mut skipped = split.skipped.clone();
    bump(&mut skipped, "malformed_record", load.skipped);
    let mut pairs = Vec::new();
    for it in &split.items {
        let Some(gold) = it.claim.gold_label else {
            bump(&mut skipped, "unlabeled", 1);
            continue;
        };
        let v = predict_features(it.claim.id, &it.features, &model, Some(it.evidence.clone()))?;
        pairs.push((v, Some(gold)));
    }
    if pairs.is_empty() {
        return Err(Error::Invalid("no claims could be scored".into()));
    }
    let mut report = build_report(&pairs, &analyzer(cfg, backends))?;
    report.skipped = skipped;
    let verdicts: Vec<&Verdict> = pairs.iter().map(|(v, _)| v).collect();
    write_lines(&cfg.output_dir.join("verdicts.jsonl"), &verdicts)?;
    write_report(&cfg.output_dir, &report)?;
    Ok(report)
}

/// Rebuilds a report from stored verdicts. Gold labels come from the
/// verdict's evidence, or from `claims` when given.
pub fn run_analyze(
    verdicts_path: &Path,
    claims: Option<&ClaimSet>,
    analyzer: &ErrorAnalyzer,
    output_dir: &Path,
) -> Result<EvaluationReport> {
    let file = File::open(verdicts_path).map_err(io_err(verdicts_path))?;
    let mut pairs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(verdicts_path))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Verdict = serde_json::from_str(&line).map_err(|e| Error::Record {
            line: i + 1,
            message: e.to_string(),
        })?;
        let gold = claims
            .and_then(|c| c.get(v.claim_id))
            .and_then(|c| c.gold_label)
            .or_else(|| v.evidence.as_ref().and_then(|e| e.origin.source.gold_label));
        pairs.push((v, gold));
    }
    let zero_shot = pairs.iter().all(|(v, _)| v.verifier == VerifierKind::ZeroShot);
    let mut report = build_report(&pairs, analyzer)?;
    if zero_shot {
        report = report.with_binary_metrics();
    }
    fs::create_dir_all(output_dir).map_err(io_err(output_dir))?;
    write_report(output_dir, &report)?;
    Ok(report)
}
