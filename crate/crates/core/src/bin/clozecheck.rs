use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use clozecheck::dataset::load_claimset;
use clozecheck::entailment::PairOrientation;
use clozecheck::evaluation::{ErrorAnalyzer, EvaluationReport};
use clozecheck::masking::LexiconNer;
use clozecheck::pipeline::{self, Backends, ClozeBackendConfig, FeatureBackendConfig, PipelineConfig, BACKEND_URL_ENV};
use clozecheck::service::{self, ServiceState};
use clozecheck::session::SessionStore;
use clozecheck::zeroshot::MatchMode;
use clozecheck::{Error, MaskStrategy, Result, VerifierKind};

#[derive(Parser)]
#[command(name = "clozecheck", version, about = "Fact verification with a cloze language model as the knowledge source")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a claim file and write it back normalized.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "dev")]
        split: String,
        #[arg(long)]
        output_dir: PathBuf,
    },
    /// Mask every claim.
    Mask(RunArgs),
    /// Zero-shot token-match verification.
    Zeroshot(RunArgs),
    /// Build (and cache) classifier features.
    ExtractFeatures(RunArgs),
    /// Train the entailment-feature classifier.
    Train(RunArgs),
    /// Evaluate a trained classifier.
    Eval(RunArgs),
    /// Rebuild a report and error taxonomy from stored verdicts.
    Analyze {
        #[arg(long)]
        verdicts: PathBuf,
        /// Claim file supplying gold labels.
        #[arg(long)]
        claims: Option<PathBuf>,
        #[arg(long)]
        ner_lexicon: Option<PathBuf>,
        #[arg(long)]
        output_dir: PathBuf,
    },
    /// Run the HTTP probe service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct BackendArgs {
    /// Mock prediction table (JSON lines).
    #[arg(long, conflicts_with = "backend_url")]
    mock_table: Option<PathBuf>,
    /// Base URL of a remote cloze backend.
    #[arg(long, env = BACKEND_URL_ENV)]
    backend_url: Option<String>,
    /// One token per line.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Gazetteer of `{text, label}` records for the built-in NER.
    #[arg(long)]
    ner_lexicon: Option<PathBuf>,
    /// External NER process, e.g. "python3 ner_server.py"; split on whitespace.
    #[arg(long)]
    ner_command: Option<String>,
}

impl BackendArgs {
    fn ner_command(&self) -> Option<Vec<String>> {
        self.ner_command
            .as_ref()
            .map(|c| c.split_whitespace().map(str::to_string).collect())
    }

    fn cloze(&self) -> Option<ClozeBackendConfig> {
        match (&self.mock_table, &self.backend_url) {
            (Some(t), _) => Some(ClozeBackendConfig::Mock {
                table: t.clone(),
                vocab: self.vocab.clone(),
            }),
            (None, Some(u)) => Some(ClozeBackendConfig::Remote {
                url: u.clone(),
                vocab: self.vocab.clone(),
            }),
            (None, None) => None,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskArg {
    LastToken,
    LastEntity,
}

#[derive(Clone, Copy, ValueEnum)]
enum MatchArg {
    Normalized,
    Exact,
}

#[derive(Clone, Copy, ValueEnum)]
enum FeatureArg {
    HashEntailment,
    HashEncoder,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrientationArg {
    EvidenceEntailsClaim,
    ClaimEntailsEvidence,
}

#[derive(Args)]
struct RunArgs {
    /// A saved run config; other flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Claim file (JSON lines with id, claim, label).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Name recorded for the dataset split [default: dev].
    #[arg(long)]
    split: Option<String>,
    /// Claim file used for early stopping when training.
    #[arg(long)]
    dev_dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    masking: Option<MaskArg>,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long, value_enum)]
    match_mode: Option<MatchArg>,
    #[arg(long, value_enum)]
    features: Option<FeatureArg>,
    #[arg(long, value_enum)]
    orientation: Option<OrientationArg>,
    /// Feature width D [default: 400].
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    hidden_size: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Feature cache [default: OUTPUT_DIR/feature-cache].
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Model file [default: OUTPUT_DIR/model.bin].
    #[arg(long)]
    model: Option<PathBuf>,
    /// Seeds weight init and shuffling [default: 0].
    #[arg(long)]
    seed: Option<u64>,
}

impl RunArgs {
    fn into_config(self, verifier: VerifierKind) -> Result<PipelineConfig> {
        let cloze = self.backend.cloze();
        let mut cfg = match self.config {
            Some(p) => {
                let mut cfg = PipelineConfig::load(p)?;
                if let Some(c) = cloze {
                    cfg.cloze = c;
                }
                cfg
            }
            None => {
                let missing = |f: &str| Error::Config(format!("--{f} is required without --config"));
                PipelineConfig::new(
                    self.dataset.clone().ok_or_else(|| missing("dataset"))?,
                    cloze.ok_or_else(|| missing("mock-table or --backend-url"))?,
                    self.output_dir.clone().ok_or_else(|| missing("output-dir"))?,
                )
            }
        };
        cfg.verifier = verifier;
        set(&mut cfg.dataset, self.dataset);
        set(&mut cfg.split, self.split);
        set(&mut cfg.output_dir, self.output_dir);
        set(&mut cfg.feature_dim, self.feature_dim);
        set(&mut cfg.seed, self.seed);
        set(&mut cfg.train.learning_rate, self.learning_rate);
        set(&mut cfg.train.batch_size, self.batch_size);
        set(&mut cfg.train.max_epochs, self.max_epochs);
        set(&mut cfg.train.patience, self.patience);
        set(&mut cfg.train.hidden_size, self.hidden_size);
        if self.dev_dataset.is_some() {
            cfg.dev_dataset = self.dev_dataset;
        }
        if let Some(cmd) = self.backend.ner_command() {
            cfg.ner_command = Some(cmd);
        }
        if self.backend.ner_lexicon.is_some() {
            cfg.ner_lexicon = self.backend.ner_lexicon;
        }
        if self.cache_dir.is_some() {
            cfg.cache_dir = self.cache_dir;
        }
        if self.model.is_some() {
            cfg.model_path = self.model;
        }
        if let Some(m) = self.masking {
            cfg.masking = match m {
                MaskArg::LastToken => MaskStrategy::LastToken,
                MaskArg::LastEntity => MaskStrategy::LastEntity,
            };
        }
        if let Some(m) = self.match_mode {
            cfg.match_mode = match m {
                MatchArg::Normalized => MatchMode::Normalized,
                MatchArg::Exact => MatchMode::Exact,
            };
        }
        if let Some(f) = self.features {
            cfg.features = match f {
                FeatureArg::HashEntailment => FeatureBackendConfig::HashEntailment,
                FeatureArg::HashEncoder => FeatureBackendConfig::HashEncoder,
            };
        }
        if let Some(o) = self.orientation {
            cfg.orientation = match o {
                OrientationArg::EvidenceEntailsClaim => PairOrientation::EvidenceEntailsClaim,
                OrientationArg::ClaimEntailsEvidence => PairOrientation::ClaimEntailsEvidence,
            };
        }
        cfg.apply_env_overrides();
        Ok(cfg)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[derive(Args)]
struct ServeArgs {
    /// Claim file to serve; repeat as PATH or SPLIT=PATH.
    #[arg(long = "dataset", required = true)]
    datasets: Vec<String>,
    #[command(flatten)]
    backend: BackendArgs,
    /// Directory for session logs; sessions are in-memory without it.
    #[arg(long)]
    sessions: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
}

fn print_report(report: &EvaluationReport) {
    print!("{}", report.to_table());
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { input, split, output_dir } => {
            let (_, s) = pipeline::run_ingest(&input, &split, &output_dir)?;
            println!("{}: loaded {}, skipped {}", s.split, s.loaded, s.skipped);
            for e in &s.errors {
                eprintln!("  {e}");
            }
        }
        Command::Mask(args) => {
            let cfg = args.into_config(VerifierKind::ZeroShot)?;
            let (_, s) = pipeline::run_mask(&cfg, &Backends::from_config(&cfg)?)?;
            println!(
                "masked {} (fallback {}), unmaskable {}",
                s.masked, s.fallback_used, s.unmaskable
            );
        }
        Command::Zeroshot(args) => {
            let cfg = args.into_config(VerifierKind::ZeroShot)?;
            print_report(&pipeline::run_zero_shot(&cfg, &Backends::from_config(&cfg)?)?);
        }
        Command::ExtractFeatures(args) => {
            let cfg = args.into_config(VerifierKind::EntailmentMlp)?;
            let split = pipeline::run_extract_features(&cfg, &Backends::from_config(&cfg)?)?;
            println!("featurized {} claims, skipped {:?}", split.items.len(), split.skipped);
        }
        Command::Train(args) => {
            let cfg = args.into_config(VerifierKind::EntailmentMlp)?;
            let m = pipeline::run_train(&cfg, &Backends::from_config(&cfg)?)?;
            println!(
                "best epoch {} of {}, dev accuracy {:.4}; model at {}",
                m.best_epoch,
                m.epochs_run(),
                m.dev_accuracy_history[m.best_epoch],
                cfg.model_path().display()
            );
        }
        Command::Eval(args) => {
            let cfg = args.into_config(VerifierKind::EntailmentMlp)?;
            print_report(&pipeline::run_eval(&cfg, &Backends::from_config(&cfg)?)?);
        }
        Command::Analyze {
            verdicts,
            claims,
            ner_lexicon,
            output_dir,
        } => {
            let claims = claims.map(|p| load_claimset(p, "claims").map(|(s, _)| s)).transpose()?;
            let analyzer = match ner_lexicon {
                Some(p) => ErrorAnalyzer::new(Arc::new(LexiconNer::load(p)?)),
                None => ErrorAnalyzer::default(),
            };
            print_report(&pipeline::run_analyze(&verdicts, claims.as_ref(), &analyzer, &output_dir)?);
        }
        Command::Serve(args) => serve(args)?,
    }
    Ok(())
}

fn serve(args: ServeArgs) -> Result<()> {
    let cloze = args
        .backend
        .cloze()
        .ok_or_else(|| Error::Config("--mock-table or --backend-url is required".into()))?;
    let mut cfg = PipelineConfig::new("", cloze, "");
    cfg.ner_command = args.backend.ner_command();
    cfg.ner_lexicon = args.backend.ner_lexicon;
    let backends = Backends::from_config(&cfg)?;
    let sessions = match args.sessions {
        Some(dir) => SessionStore::open(dir)?,
        None => SessionStore::in_memory(),
    };
    let mut state = ServiceState::new(backends.cloze, backends.ner, sessions);
    for spec in &args.datasets {
        let (split, path) = match spec.split_once('=') {
            Some((s, p)) => (s.to_string(), PathBuf::from(p)),
            None => (
                PathBuf::from(spec)
                    .file_stem()
                    .map_or("dev".into(), |s| s.to_string_lossy().into_owned()),
                PathBuf::from(spec),
            ),
        };
        let (set, summary) = load_claimset(&path, &split)?;
        eprintln!("split {split}: {} claims, {} skipped", summary.loaded, summary.skipped);
        state = state.with_split(set);
    }
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Backend(format!("runtime: {e}")))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(args.addr)
            .await
            .map_err(|e| Error::Config(format!("cannot bind {}: {e}", args.addr)))?;
        eprintln!("listening on http://{}/v1", args.addr);
        service::serve(listener, Arc::new(state))
            .await
            .map_err(|e| Error::Backend(format!("server: {e}")))
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
