//! HTTP probe service under the `/v1` prefix.
//!
//! | method | path | body |
//! |---|---|---|
//! | GET | `/v1/claims?split=&offset=&limit=` | |
//! | GET | `/v1/claims/{id}?split=` | |
//! | POST | `/v1/mask` | `{claim_id, strategy, token_index?, split?}` |
//! | POST | `/v1/predict` | `{masked_text, k}` |
//! | POST | `/v1/sessions` | `{}` |
//! | POST | `/v1/sessions/{id}/verdicts` | `{claim_id, verdict, token_index?, shown?, masked_text?, split?}` |
//! | GET | `/v1/sessions/{id}` | |
//!
//! Errors are `{"error": {"code": ..., "message": ...}}`. Gold labels are
//! never sent to the client.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cloze::{ClozeBackend, PredictRequest, PredictResponse};
use crate::dataset::ClaimSet;
use crate::error::{Error, Result};
use crate::masking::{apply_manual_mask, tokenize_surface, Masker, NerBackend};
use crate::session::{now_ms, ProbeRecord, ProbeSession, SessionStore};
use crate::types::{parse_label, Claim, MaskStrategy, MaskedClaim, MASK};

pub const DEFAULT_PAGE_SIZE: usize = 50;
pub const MAX_PAGE_SIZE: usize = 500;
pub const MAX_TOP_K: usize = 100;

pub struct ServiceState {
    splits: BTreeMap<String, Arc<ClaimSet>>,
    default_split: String,
    cloze: Arc<dyn ClozeBackend>,
    ner: Arc<dyn NerBackend>,
    sessions: SessionStore,
}

impl ServiceState {
    /// The first split added becomes the default.
    pub fn new(cloze: Arc<dyn ClozeBackend>, ner: Arc<dyn NerBackend>, sessions: SessionStore) -> Self {
        ServiceState {
            splits: BTreeMap::new(),
            default_split: String::new(),
            cloze: Arc::new(crate::cloze::GatedBackend::new(cloze)),
            ner,
            sessions,
        }
    }

    pub fn with_split(mut self, set: ClaimSet) -> Self {
        if self.splits.is_empty() {
            self.default_split = set.split_name().to_string();
        }
        self.splits.insert(set.split_name().to_string(), Arc::new(set));
        self
    }

    pub fn sessions(&self) -> &SessionStore {
        &self.sessions
    }

    fn split(&self, name: Option<&str>) -> Result<&Arc<ClaimSet>> {
        let name = name.unwrap_or(&self.default_split);
        self.splits
            .get(name)
            .ok_or_else(|| Error::NotFound(format!("split {name:?}")))
    }

    fn claim(&self, split: Option<&str>, id: u64) -> Result<&Claim> {
        self.split(split)?
            .get(id)
            .ok_or_else(|| Error::NotFound(format!("claim {id}")))
    }
}

pub fn status_for(err: &Error) -> StatusCode {
    match err {
        Error::NotFound(_) | Error::NoPrediction { .. } => StatusCode::NOT_FOUND,
        Error::Backend(_) => StatusCode::BAD_GATEWAY,
        Error::Config(_) | Error::ModelFormat(_) | Error::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        Error::UnknownLabel(_)
        | Error::Record { .. }
        | Error::Unmaskable { .. }
        | Error::TokenIndex { .. }
        | Error::Invalid(_)
        | Error::Json(_) => StatusCode::BAD_REQUEST,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorEnvelope {
    pub error: ErrorBody,
}

struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorEnvelope {
            error: ErrorBody {
                code: self.0.code().to_string(),
                message: self.0.to_string(),
            },
        };
        (status_for(&self.0), Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(serde_json::from_slice(b"{}")?);
    }
    Ok(serde_json::from_slice(body)?)
}

/// Runs blocking backend or disk work off the async executor.
async fn blocking<T: Send + 'static>(
    state: &Arc<ServiceState>,
    f: impl FnOnce(&ServiceState) -> Result<T> + Send + 'static,
) -> Result<T> {
    let state = Arc::clone(state);
    tokio::task::spawn_blocking(move || f(&state))
        .await
        .map_err(|e| Error::Backend(format!("worker task failed: {e}")))?
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenView {
    pub index: usize,
    pub text: String,
    pub start: usize,
    pub end: usize,
    pub punctuation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimView {
    pub id: u64,
    pub text: String,
    pub tokens: Vec<TokenView>,
}

impl From<&Claim> for ClaimView {
    fn from(c: &Claim) -> Self {
        let tokens = tokenize_surface(&c.text)
            .into_iter()
            .enumerate()
            .map(|(index, t)| TokenView {
                index,
                punctuation: t.is_punctuation(),
                text: t.text,
                start: t.span.start,
                end: t.span.end,
            })
            .collect();
        ClaimView {
            id: c.id,
            text: c.text.clone(),
            tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimPage {
    pub split: String,
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
    pub claims: Vec<ClaimView>,
}

#[derive(Debug, Default, Deserialize)]
struct PageQuery {
    split: Option<String>,
    offset: Option<usize>,
    limit: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
struct SplitQuery {
    split: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRequest {
    pub claim_id: u64,
    pub strategy: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRequest {
    pub claim_id: u64,
    pub verdict: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_index: Option<usize>,
    #[serde(default)]
    pub shown: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masked_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {}

async fn list_claims(
    State(st): State<Arc<ServiceState>>,
    Query(q): Query<PageQuery>,
) -> ApiResult<ClaimPage> {
    let set = st.split(q.split.as_deref())?;
    let offset = q.offset.unwrap_or(0);
    let limit = q.limit.unwrap_or(DEFAULT_PAGE_SIZE);
    if limit == 0 || limit > MAX_PAGE_SIZE {
        return Err(Error::Invalid(format!("limit must be between 1 and {MAX_PAGE_SIZE}")).into());
    }
    let claims = set.iter().skip(offset).take(limit).map(ClaimView::from).collect();
    Ok(Json(ClaimPage {
        split: set.split_name().to_string(),
        total: set.len(),
        offset,
        limit,
        claims,
    }))
}

async fn get_claim(
    State(st): State<Arc<ServiceState>>,
    Path(id): Path<u64>,
    Query(q): Query<SplitQuery>,
) -> ApiResult<ClaimView> {
    Ok(Json(ClaimView::from(st.claim(q.split.as_deref(), id)?)))
}

async fn mask(State(st): State<Arc<ServiceState>>, body: Bytes) -> ApiResult<MaskedClaim> {
    let req: MaskRequest = parse_body(&body)?;
    let strategy: MaskStrategy = req.strategy.parse()?;
    let mut mc = blocking(&st, move |st| {
        let claim = st.claim(req.split.as_deref(), req.claim_id)?;
        match (strategy, req.token_index) {
            (MaskStrategy::Manual, Some(i)) => apply_manual_mask(claim, i),
            (MaskStrategy::Manual, None) => Err(Error::Invalid("MANUAL masking needs token_index".into())),
            (_, Some(_)) => Err(Error::Invalid("token_index is only valid with MANUAL masking".into())),
            (s, None) => Masker::new(s, Some(Arc::clone(&st.ner))).mask(claim),
        }
    })
    .await?;
    mc.source.gold_label = None;
    Ok(Json(mc))
}

async fn predict(State(st): State<Arc<ServiceState>>, body: Bytes) -> ApiResult<PredictResponse> {
    let req: PredictRequest = parse_body(&body)?;
    if req.k == 0 || req.k > MAX_TOP_K {
        return Err(Error::Invalid(format!("k must be between 1 and {MAX_TOP_K}")).into());
    }
    if req.masked_text.matches(MASK).count() != 1 {
        return Err(Error::Invalid(format!("masked_text must contain exactly one {MASK}")).into());
    }
    let preds = blocking(&st, move |st| st.cloze.query_topk(&req.masked_text, req.k)).await?;
    Ok(Json(PredictResponse::from(preds.as_slice())))
}

async fn create_session(State(st): State<Arc<ServiceState>>, body: Bytes) -> ApiResult<ProbeSession> {
    let _: CreateSession = parse_body(&body)?;
    Ok(Json(blocking(&st, |st| st.sessions.create()).await?))
}

async fn get_session(State(st): State<Arc<ServiceState>>, Path(id): Path<String>) -> ApiResult<ProbeSession> {
    Ok(Json(st.sessions.get(&id)?))
}

async fn post_verdict(
    State(st): State<Arc<ServiceState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<ProbeSession> {
    let req: VerdictRequest = parse_body(&body)?;
    let verdict = parse_label(&req.verdict)?;
    let gold = st.claim(req.split.as_deref(), req.claim_id)?.gold_label;
    let rec = ProbeRecord {
        claim_id: req.claim_id,
        token_index: req.token_index,
        masked_text: req.masked_text,
        shown: req.shown,
        verdict,
        gold,
        timestamp_ms: now_ms(),
    };
    Ok(Json(blocking(&st, move |st| st.sessions.record(&id, rec)).await?))
}

async fn fallback() -> ApiError {
    ApiError(Error::NotFound("no such endpoint".into()))
}

pub fn router(state: Arc<ServiceState>) -> Router {
    let v1 = Router::new()
        .route("/claims", get(list_claims))
        .route("/claims/{id}", get(get_claim))
        .route("/mask", post(mask))
        .route("/predict", post(predict))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/verdicts", post(post_verdict));
    Router::new().nest("/v1", v1).fallback(fallback).with_state(state)
}

pub async fn serve(listener: tokio::net::TcpListener, state: Arc<ServiceState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// Like [`serve`], returning once `shutdown` resolves and in-flight
/// requests finish.
pub async fn serve_with_shutdown(
    listener: tokio::net::TcpListener,
    state: Arc<ServiceState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}
