//! HTTP/JSON search service with an LRU of in-memory indexes backed by
//! on-disk index files.

use std::{
    collections::HashMap,
    num::NonZeroUsize,
    path::PathBuf,
    sync::{Arc, Mutex},
    time::Instant,
};

use axum::{
    extract::{rejection::JsonRejection, DefaultBodyLimit, Path, State},
    http::{HeaderValue, StatusCode},
    response::{IntoResponse, Response},
    routing::{get, post},
    Json, Router,
};
use lru::LruCache;
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use crate::{
    cache::sha256_hex,
    config::ServiceConfig,
    embedding::encode_query,
    error::Error,
    index::{FusionMode, PhraseIndex, ThresholdPolicy},
    model::Document,
    pipeline::{search_with, Engine, Match, SearchOptions},
};

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Input(_) => StatusCode::BAD_REQUEST,
            Error::Transport(_) | Error::Protocol(_) | Error::Encoding(_) => StatusCode::BAD_GATEWAY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        let status = if r.status() == StatusCode::PAYLOAD_TOO_LARGE {
            StatusCode::PAYLOAD_TOO_LARGE
        } else {
            StatusCode::BAD_REQUEST
        };
        Self::new(status, r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// All three fusion modes of one document, built from one encoding pass.
pub struct DocEntry {
    pub text_hash: String,
    pub mention_count: usize,
    pub entity_count: usize,
    indexes: HashMap<FusionMode, Arc<PhraseIndex>>,
}

impl DocEntry {
    pub fn index(&self, mode: FusionMode) -> &Arc<PhraseIndex> {
        &self.indexes[&mode]
    }

    fn document(&self) -> &Document {
        self.indexes[&FusionMode::Both].document()
    }

    fn dims(&self) -> usize {
        self.indexes[&FusionMode::Both].dims()
    }

    fn from_indexes(indexes: HashMap<FusionMode, Arc<PhraseIndex>>) -> Self {
        let both = &indexes[&FusionMode::Both];
        Self {
            text_hash: sha256_hex(both.document().text().as_bytes()),
            mention_count: both.len(),
            entity_count: both.entity_count(),
            indexes,
        }
    }
}

pub struct AppState {
    engine: Engine,
    config: ServiceConfig,
    indexes: Mutex<LruCache<String, Arc<DocEntry>>>,
    building: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
}

impl AppState {
    pub fn new(engine: Engine, config: ServiceConfig) -> crate::Result<Self> {
        config.validate()?;
        let dir = index_dir(&config);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let capacity = NonZeroUsize::new(config.index_capacity).expect("validated");
        Ok(Self {
            engine,
            config,
            indexes: Mutex::new(LruCache::new(capacity)),
            building: Mutex::new(HashMap::new()),
        })
    }

    pub fn from_config(config: ServiceConfig) -> crate::Result<Self> {
        let engine = config.build_engine()?;
        if engine.linker.is_none() {
            return Err(Error::Config("the service needs a gazetteer or linker_url".into()));
        }
        Self::new(engine, config)
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    fn cached(&self, doc_id: &str) -> Option<Arc<DocEntry>> {
        self.indexes.lock().expect("index cache poisoned").get(doc_id).cloned()
    }

    fn remember(&self, doc_id: &str, entry: Arc<DocEntry>) {
        self.indexes.lock().expect("index cache poisoned").put(doc_id.to_owned(), entry);
    }

    fn index_path(&self, doc_id: &str, mode: FusionMode) -> PathBuf {
        index_dir(&self.config).join(format!("{doc_id}.{mode}.ktrlf"))
    }

    /// Reads a persisted document; `None` when any mode file is missing.
    fn load_from_disk(&self, doc_id: &str) -> crate::Result<Option<DocEntry>> {
        let mut indexes = HashMap::new();
        for mode in FusionMode::ALL {
            let path = self.index_path(doc_id, mode);
            if !path.is_file() {
                return Ok(None);
            }
            let index = PhraseIndex::load(&path)?;
            if index.mode() != mode || index.doc_id() != doc_id {
                return Err(Error::Format(format!("{} holds another index", path.display())));
            }
            indexes.insert(mode, Arc::new(index));
        }
        Ok(Some(DocEntry::from_indexes(indexes)))
    }

    /// Memory first, then disk.
    fn lookup(&self, doc_id: &str) -> crate::Result<Option<Arc<DocEntry>>> {
        if let Some(e) = self.cached(doc_id) {
            return Ok(Some(e));
        }
        match self.load_from_disk(doc_id)? {
            Some(e) => {
                let e = Arc::new(e);
                self.remember(doc_id, e.clone());
                Ok(Some(e))
            }
            None => Ok(None),
        }
    }

    fn build(&self, document: &Document) -> crate::Result<DocEntry> {
        let components = self.engine.components(document)?;
        let mut indexes = HashMap::new();
        for mode in FusionMode::ALL {
            let index = components.fuse(mode, self.engine.normalize);
            index.save(self.index_path(document.doc_id(), mode))?;
            indexes.insert(mode, Arc::new(index));
        }
        Ok(DocEntry::from_indexes(indexes))
    }

    fn expected_dims(&self) -> usize {
        2 * self.engine.provider.dim()
    }
}

fn index_dir(config: &ServiceConfig) -> PathBuf {
    config.cache_dir.join("indexes")
}

fn valid_doc_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && id != "."
        && id != ".."
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexRequest {
    pub doc_id: Option<String>,
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct IndexResponse {
    pub doc_id: String,
    pub mention_count: usize,
    pub entity_count: usize,
    pub indexing_ms: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DocumentInfo {
    pub doc_id: String,
    pub char_count: usize,
    pub mention_count: usize,
    pub entity_count: usize,
    pub dims: usize,
    pub text: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchRequest {
    pub query: String,
    pub top_k: Option<usize>,
    pub mode: Option<FusionMode>,
    pub score_floor: Option<f64>,
    pub policy: Option<ThresholdPolicy>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SearchResponse {
    pub matches: Vec<Match>,
    pub latency_ms: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EntityResponse {
    pub entity_id: String,
    pub title: String,
    pub description: String,
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))?
}

async fn index_document(
    State(state): State<Arc<AppState>>,
    body: Result<Json<IndexRequest>, JsonRejection>,
) -> ApiResult<IndexResponse> {
    let Json(req) = body?;
    if req.text.trim().is_empty() {
        return Err(ApiError::bad_request("text must be non-empty"));
    }
    let chars = req.text.chars().count();
    if chars > state.config.max_text_chars {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            format!("text has {chars} chars, limit is {}", state.config.max_text_chars),
        ));
    }
    let text_hash = sha256_hex(req.text.as_bytes());
    let doc_id = match req.doc_id {
        Some(id) if valid_doc_id(&id) => id,
        Some(id) => return Err(ApiError::bad_request(format!("doc_id {id:?} must match [A-Za-z0-9._-]{{1,128}}"))),
        None => text_hash[..16].to_owned(),
    };

    let gate = state
        .building
        .lock()
        .expect("build map poisoned")
        .entry(doc_id.clone())
        .or_default()
        .clone();
    let _guard = gate.lock().await;

    let response = {
        let state = state.clone();
        let doc_id = doc_id.clone();
        blocking(move || {
            let reusable = |e: &DocEntry| e.text_hash == text_hash && e.dims() == state.expected_dims();
            if let Some(e) = state.cached(&doc_id).filter(|e| reusable(e)) {
                return Ok(stats(&doc_id, &e, 0.0));
            }
            if let Some(e) = state.load_from_disk(&doc_id).ok().flatten().filter(reusable) {
                let e = Arc::new(e);
                state.remember(&doc_id, e.clone());
                return Ok(stats(&doc_id, &e, 0.0));
            }
            let started = Instant::now();
            let document = Document::new(doc_id.clone(), req.text)?;
            let e = Arc::new(state.build(&document)?);
            let ms = started.elapsed().as_secs_f64() * 1e3;
            state.remember(&doc_id, e.clone());
            tracing::info!(doc_id, mentions = e.mention_count, indexing_ms = ms, "indexed document");
            Ok(stats(&doc_id, &e, ms))
        })
        .await
    };
    drop(_guard);
    {
        let mut building = state.building.lock().expect("build map poisoned");
        if building.get(&doc_id).is_some_and(|g| Arc::strong_count(g) == 1) {
            building.remove(&doc_id);
        }
    }
    response.map(Json)
}

fn stats(doc_id: &str, e: &DocEntry, indexing_ms: f64) -> IndexResponse {
    IndexResponse {
        doc_id: doc_id.to_owned(),
        mention_count: e.mention_count,
        entity_count: e.entity_count,
        indexing_ms,
    }
}

async fn lookup_or_404(state: &Arc<AppState>, doc_id: String) -> Result<Arc<DocEntry>, ApiError> {
    if !valid_doc_id(&doc_id) {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown document {doc_id:?}")));
    }
    let state = state.clone();
    blocking(move || {
        state
            .lookup(&doc_id)?
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown document {doc_id:?}")))
    })
    .await
}

async fn get_document(State(state): State<Arc<AppState>>, Path(doc_id): Path<String>) -> ApiResult<DocumentInfo> {
    let e = lookup_or_404(&state, doc_id.clone()).await?;
    let doc = e.document();
    Ok(Json(DocumentInfo {
        doc_id,
        char_count: doc.char_count(),
        mention_count: e.mention_count,
        entity_count: e.entity_count,
        dims: e.dims(),
        text: doc.text().to_owned(),
    }))
}

async fn search_document(
    State(state): State<Arc<AppState>>,
    Path(doc_id): Path<String>,
    body: Result<Json<SearchRequest>, JsonRejection>,
) -> ApiResult<SearchResponse> {
    let Json(req) = body?;
    if req.top_k == Some(0) {
        return Err(ApiError::bad_request("top_k must be at least 1"));
    }
    if req.query.trim().is_empty() {
        return Err(ApiError::bad_request("query must be non-empty"));
    }
    if req.score_floor.is_some_and(|f| !f.is_finite()) {
        return Err(ApiError::bad_request("score_floor must be finite"));
    }
    let entry = lookup_or_404(&state, doc_id).await?;
    let index = entry.index(req.mode.unwrap_or(state.engine.mode)).clone();
    if index.dims() != state.expected_dims() {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            format!(
                "document was indexed with {} dims but the provider produces {}; re-index it",
                index.dims(),
                state.expected_dims()
            ),
        ));
    }
    let options = SearchOptions {
        top_k: req.top_k.unwrap_or(state.config.default_top_k),
        policy: req.policy.unwrap_or(state.config.default_policy),
        score_floor: req.score_floor,
    };
    let state = state.clone();
    blocking(move || {
        let started = Instant::now();
        let q = encode_query(state.engine.provider.as_ref(), &req.query)?;
        let hits = search_with(&index, &q, options)?;
        let latency_ms = started.elapsed().as_secs_f64() * 1e3;
        Ok(Json(SearchResponse {
            matches: hits.iter().map(Match::from).collect(),
            latency_ms,
        }))
    })
    .await
}

async fn get_entity(State(state): State<Arc<AppState>>, Path(entity_id): Path<String>) -> ApiResult<EntityResponse> {
    let state = state.clone();
    blocking(move || {
        let r = state.engine.knowledge.get_knowledge(&entity_id)?;
        Ok(Json(EntityResponse {
            entity_id: r.entity_id,
            title: r.title,
            description: r.description,
        }))
    })
    .await
}

async fn healthz(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(serde_json::json!({
        "status": "ok",
        "provider": state.engine.provider.name(),
        "dims": state.expected_dims(),
    }))
}

fn cors(origin: &str) -> crate::Result<CorsLayer> {
    let layer = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    if origin.trim() == "*" {
        return Ok(layer.allow_origin(Any));
    }
    let origins = origin
        .split(',')
        .map(str::trim)
        .filter(|o| !o.is_empty())
        .map(|o| HeaderValue::from_str(o).map_err(|_| Error::Config(format!("bad CORS origin {o:?}"))))
        .collect::<crate::Result<Vec<_>>>()?;
    Ok(layer.allow_origin(AllowOrigin::list(origins)))
}

pub fn router(state: Arc<AppState>) -> crate::Result<Router> {
    let body_limit = state.config.max_text_chars.saturating_mul(4).saturating_add(64 * 1024);
    let cors = cors(&state.config.cors_origin)?;
    Ok(Router::new()
        .route("/v1/documents", post(index_document))
        .route("/v1/documents/{doc_id}", get(get_document))
        .route("/v1/documents/{doc_id}/search", post(search_document))
        .route("/v1/entities/{entity_id}", get(get_entity))
        .route("/v1/healthz", get(healthz))
        .layer(DefaultBodyLimit::max(body_limit))
        .layer(cors)
        .with_state(state))
}

/// Binds `config.listen_address` and serves until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> crate::Result<()> {
    let addr = config.listen_address.clone();
    let state = Arc::new(AppState::from_config(config)?);
    let app = router(state)?;
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|e| Error::Config(format!("cannot listen on {addr}: {e}")))?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::Transport(e.to_string()))
}
