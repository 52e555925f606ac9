#![allow(dead_code)]

use std::{
    path::PathBuf,
    sync::{
        atomic::{AtomicBool, AtomicUsize, Ordering},
        Arc,
    },
};

use axum::{
    extract::{Query, State},
    http::StatusCode,
    response::{IntoResponse, Response},
    routing::{get, post},
    Json, Router,
};
use ktrlf::{
    embedding::{reference_embed_tokens, EmbeddingProvider, ReferenceHashEmbedder},
    knowledge::{KnowledgeSource, KnowledgeStore},
    linking::{EntityLinker, Gazetteer},
    model::Document,
};
use serde_json::{json, Value};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/golden")
}

pub fn gazetteer() -> Gazetteer {
    Gazetteer::load(fixtures().join("gazetteer.jsonl")).unwrap()
}

pub fn knowledge() -> KnowledgeStore {
    KnowledgeStore::fixture_dir(fixtures().join("knowledge")).unwrap()
}

/// Upstream stand-in for the linker, knowledge and embedding services,
/// answering from the fixture gazetteer, fixture knowledge and the
/// reference embedder so remote results can be compared with local ones.
pub struct MockUpstream {
    pub url: String,
    pub hits: Arc<Hits>,
}

#[derive(Default)]
pub struct Hits {
    pub link: AtomicUsize,
    pub knowledge: AtomicUsize,
    pub embed_tokens: AtomicUsize,
    pub embed_query: AtomicUsize,
    /// Answer every request with 500.
    pub fail: AtomicBool,
    /// Answer /link with a span past the end of the text.
    pub bad_span: AtomicBool,
}

impl Hits {
    pub fn total(&self) -> usize {
        self.link.load(Ordering::SeqCst)
            + self.knowledge.load(Ordering::SeqCst)
            + self.embed_tokens.load(Ordering::SeqCst)
            + self.embed_query.load(Ordering::SeqCst)
    }
}

struct Upstream {
    hits: Arc<Hits>,
    gazetteer: Gazetteer,
    knowledge_dir: PathBuf,
    knowledge: KnowledgeStore,
    embedder: ReferenceHashEmbedder,
}

type S = State<Arc<Upstream>>;

fn failing(s: &Upstream) -> Option<Response> {
    s.hits
        .fail
        .load(Ordering::SeqCst)
        .then(|| (StatusCode::INTERNAL_SERVER_ERROR, "boom").into_response())
}

async fn link(State(s): S, Json(body): Json<Value>) -> Response {
    s.hits.link.fetch_add(1, Ordering::SeqCst);
    if let Some(r) = failing(&s) {
        return r;
    }
    let text = body["text"].as_str().unwrap();
    let doc = Document::new("x", text).unwrap();
    let mut mentions: Vec<Value> = s
        .gazetteer
        .link(&doc)
        .unwrap()
        .into_iter()
        .map(|m| {
            json!({"start": m.span.start, "end": m.span.end, "entity_id": m.entity_id,
                   "title": m.entity_id, "confidence": 0.9})
        })
        .collect();
    if s.hits.bad_span.load(Ordering::SeqCst) {
        let n = doc.char_count();
        mentions.push(json!({"start": n, "end": n + 3, "entity_id": "X", "title": "X", "confidence": 0.5}));
    }
    Json(json!({ "mentions": mentions })).into_response()
}

async fn knowledge_handler(State(s): S, Query(q): Query<std::collections::HashMap<String, String>>) -> Response {
    s.hits.knowledge.fetch_add(1, Ordering::SeqCst);
    if let Some(r) = failing(&s) {
        return r;
    }
    let id = q.get("entity_id").cloned().unwrap_or_default();
    let Ok(text) = std::fs::read_to_string(s.knowledge_dir.join(format!("{id}.txt"))) else {
        return (StatusCode::NOT_FOUND, "unknown").into_response();
    };
    let title = s.knowledge.get_knowledge(&id).unwrap().title;
    Json(json!({"entity_id": id, "title": title, "text": text})).into_response()
}

async fn embed_tokens(State(s): S, Json(body): Json<Value>) -> Response {
    s.hits.embed_tokens.fetch_add(1, Ordering::SeqCst);
    if let Some(r) = failing(&s) {
        return r;
    }
    let d = s.embedder.dim;
    let results: Vec<Value> = body["texts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| {
            let te = reference_embed_tokens(t.as_str().unwrap(), d, s.embedder.seed_start);
            let vectors: Vec<Vec<f32>> = (0..te.len()).map(|i| te.vector(i).to_vec()).collect();
            let spans: Vec<[usize; 2]> = te.tokenized.char_spans.iter().map(|sp| [sp.start, sp.end]).collect();
            json!({"tokens": te.tokenized.tokens, "spans": spans, "vectors": vectors})
        })
        .collect();
    Json(json!({"d": d, "results": results})).into_response()
}

async fn embed_query(State(s): S, Json(body): Json<Value>) -> Response {
    s.hits.embed_query.fetch_add(1, Ordering::SeqCst);
    if let Some(r) = failing(&s) {
        return r;
    }
    let results: Vec<Value> = body["queries"]
        .as_array()
        .unwrap()
        .iter()
        .map(|q| {
            let (a, b) = s.embedder.embed_query_pair(q.as_str().unwrap()).unwrap();
            json!({"q_start": a, "q_end": b})
        })
        .collect();
    Json(json!({"d": s.embedder.dim, "results": results})).into_response()
}

impl MockUpstream {
    pub fn start(d: usize) -> Self {
        Self::start_with(d, gazetteer(), fixtures().join("knowledge"))
    }

    pub fn start_with(d: usize, gazetteer: Gazetteer, knowledge_dir: PathBuf) -> Self {
        let hits = Arc::new(Hits::default());
        let state = Arc::new(Upstream {
            hits: hits.clone(),
            gazetteer,
            knowledge: KnowledgeStore::fixture_dir(&knowledge_dir).unwrap(),
            knowledge_dir,
            embedder: ReferenceHashEmbedder::new(d),
        });
        let app = Router::new()
            .route("/link", post(link))
            .route("/knowledge", get(knowledge_handler))
            .route("/embed_tokens", post(embed_tokens))
            .route("/embed_query", post(embed_query))
            .with_state(state);
        let (tx, rx) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                tx.send(listener.local_addr().unwrap()).unwrap();
                axum::serve(listener, app).await.unwrap();
            });
        });
        let addr = rx.recv().unwrap();
        Self {
            url: format!("http://{addr}"),
            hits,
        }
    }
}
