//! Embedding-provider contract and the phrase, query and knowledge encoders
//! built on top of it.
//!
//! A provider turns text into per-token vectors of dimension `d` and turns a
//! query into a pair of `d`-dimensional vectors, one per query encoder.
//! Every encoder here produces `2d` vectors of the form `[start; end]`:
//!
//! * phrases use the first and last token of the mention span,
//! * queries use the two query-encoder outputs,
//! * knowledge uses the first and last token of the entity title, encoded
//!   together with its description as `title [SEP] description`.
//!
//! [`ReferenceHashEmbedder`] is a deterministic, context-free stand-in for a
//! frozen encoder, so the whole pipeline runs and can be checked bit for bit
//! without model weights.

use serde::{Deserialize, Serialize};

use crate::{
    cache::{sha256_hex, DiskCache},
    error::{Error, Result},
    http::{join, status_error, HttpClient},
    model::{Document, EmbeddingVector, KnowledgeRecord, Span},
    text::normalize_mention,
};

pub const DEFAULT_SEPARATOR: &str = "[SEP]";
pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_SEED_START: u64 = 0x243F_6A88_85A3_08D3;
pub const DEFAULT_SEED_END: u64 = 0x1319_8A2E_0370_7344;

const FNV_OFFSET_BASIS: u64 = 0xCBF2_9CE4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01B3;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenizedText {
    pub tokens: Vec<String>,
    /// Char ranges into the source text, increasing and non-overlapping.
    pub char_spans: Vec<Span>,
}

/// Per-token vectors for one text, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddings {
    pub tokenized: TokenizedText,
    dim: usize,
    values: Vec<f32>,
}

impl TokenEmbeddings {
    pub fn new(tokenized: TokenizedText, dim: usize, values: Vec<f32>) -> Result<Self> {
        if tokenized.tokens.len() != tokenized.char_spans.len() {
            return Err(Error::Encoding(format!(
                "{} tokens but {} spans",
                tokenized.tokens.len(),
                tokenized.char_spans.len()
            )));
        }
        if values.len() != tokenized.tokens.len() * dim {
            return Err(Error::Encoding(format!(
                "{} values for {} tokens of dim {dim}",
                values.len(),
                tokenized.tokens.len()
            )));
        }
        Ok(Self {
            tokenized,
            dim,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokenized.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokenized.tokens.is_empty()
    }

    pub fn vector(&self, token: usize) -> &[f32] {
        &self.values[token * self.dim..(token + 1) * self.dim]
    }

    /// Indices of the first and last token intersecting `span`.
    pub fn boundary_tokens(&self, span: Span) -> Option<(usize, usize)> {
        let spans = &self.tokenized.char_spans;
        let first = spans.partition_point(|s| s.end <= span.start);
        if first >= spans.len() || !spans[first].intersects(&span) {
            return None;
        }
        let last = spans.partition_point(|s| s.start < span.end) - 1;
        Some((first, last))
    }

    /// `[v(first token); v(last token)]` over `span`.
    pub fn boundary_vector(&self, span: Span) -> Option<EmbeddingVector> {
        let (first, last) = self.boundary_tokens(span)?;
        EmbeddingVector::concat(self.vector(first), self.vector(last)).ok()
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;

    /// Per-token dimension `d`.
    fn dim(&self) -> usize;

    fn embed_tokens(&self, text: &str) -> Result<TokenEmbeddings>;

    /// Outputs of the start and end query encoders.
    fn embed_query_pair(&self, text: &str) -> Result<(Vec<f32>, Vec<f32>)>;
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for std::sync::Arc<P> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed_tokens(&self, text: &str) -> Result<TokenEmbeddings> {
        (**self).embed_tokens(text)
    }
    fn embed_query_pair(&self, text: &str) -> Result<(Vec<f32>, Vec<f32>)> {
        (**self).embed_query_pair(text)
    }
}

pub fn encode_phrase(provider: &dyn EmbeddingProvider, document: &Document, span: Span) -> Result<EmbeddingVector> {
    if !document.contains(span) {
        return Err(Error::Input(format!("span {span} outside document {}", document.doc_id())));
    }
    let tokens = provider.embed_tokens(document.text())?;
    phrase_vector(&tokens, document, span)
}

/// Phrase vector against an already tokenized document.
pub fn phrase_vector(tokens: &TokenEmbeddings, document: &Document, span: Span) -> Result<EmbeddingVector> {
    tokens.boundary_vector(span).ok_or_else(|| {
        Error::Encoding(format!(
            "span {span} ({:?}) of document {} covers no tokens",
            document.get(span).unwrap_or_default(),
            document.doc_id()
        ))
    })
}

pub fn encode_query(provider: &dyn EmbeddingProvider, query: &str) -> Result<EmbeddingVector> {
    if query.trim().is_empty() {
        return Err(Error::Input("query is empty".into()));
    }
    let (start, end) = provider.embed_query_pair(query)?;
    let d = provider.dim();
    if start.len() != d || end.len() != d {
        return Err(Error::Encoding(format!(
            "query encoders returned {} and {} values, expected {d}",
            start.len(),
            end.len()
        )));
    }
    EmbeddingVector::concat(&start, &end).map_err(|e| Error::Encoding(e.to_string()))
}

pub fn encode_knowledge(provider: &dyn EmbeddingProvider, record: &KnowledgeRecord) -> Result<EmbeddingVector> {
    encode_knowledge_with(provider, record, DEFAULT_SEPARATOR)
}

/// Encodes `title <separator> description` and keeps the title's boundary
/// tokens. All zeros if the provider finds no token in the title.
pub fn encode_knowledge_with(
    provider: &dyn EmbeddingProvider,
    record: &KnowledgeRecord,
    separator: &str,
) -> Result<EmbeddingVector> {
    if record.title.is_empty() {
        return Err(Error::Input(format!("knowledge record {} has empty title", record.entity_id)));
    }
    let text = if record.description.is_empty() {
        record.title.clone()
    } else {
        format!("{} {separator} {}", record.title, record.description)
    };
    let tokens = provider.embed_tokens(&text)?;
    let title_span = Span {
        start: 0,
        end: record.title.chars().count(),
    };
    Ok(tokens
        .boundary_vector(title_span)
        .unwrap_or_else(|| EmbeddingVector::zeros(2 * provider.dim())))
}

// ---------------------------------------------------------------- reference provider

/// Splits on Unicode whitespace and strips non-alphanumeric characters from
/// both ends of every piece; pieces that end up empty are dropped.
pub fn reference_tokenize(text: &str) -> TokenizedText {
    let chars: Vec<char> = text.chars().collect();
    let mut out = TokenizedText::default();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let mut j = i;
        while j < chars.len() && !chars[j].is_whitespace() {
            j += 1;
        }
        let (mut s, mut e) = (i, j);
        while s < e && !chars[s].is_alphanumeric() {
            s += 1;
        }
        while e > s && !chars[e - 1].is_alphanumeric() {
            e -= 1;
        }
        if s < e {
            out.tokens.push(chars[s..e].iter().collect());
            out.char_spans.push(Span { start: s, end: e });
        }
        i = j;
    }
    out
}

fn fnv1a_seeded(bytes: &[u8], seed: u64) -> u64 {
    bytes.iter().fold(FNV_OFFSET_BASIS ^ seed, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Signed character-trigram hashing of one token, L2-normalized.
pub fn reference_token_vector(token: &str, dim: usize, seed: u64) -> Vec<f32> {
    let padded: Vec<char> = std::iter::once('^')
        .chain(normalize_mention(token).chars())
        .chain(std::iter::once('$'))
        .collect();
    let mut counts = vec![0i64; dim];
    let mut buf = String::with_capacity(12);
    for w in padded.windows(3) {
        buf.clear();
        buf.extend(w);
        let h = fnv1a_seeded(buf.as_bytes(), seed);
        let idx = (h % dim as u64) as usize;
        counts[idx] += if h >> 63 == 0 { 1 } else { -1 };
    }
    let mut sq = 0.0f64;
    for &c in &counts {
        sq += (c * c) as f64;
    }
    let norm = sq.sqrt();
    if norm == 0.0 {
        return vec![0.0; dim];
    }
    counts.iter().map(|&c| (c as f64 / norm) as f32).collect()
}

pub fn reference_embed_tokens(text: &str, dim: usize, seed: u64) -> TokenEmbeddings {
    assert!(dim >= 1, "dimension must be at least 1");
    let tokenized = reference_tokenize(text);
    let mut values = Vec::with_capacity(tokenized.tokens.len() * dim);
    for token in &tokenized.tokens {
        values.extend(reference_token_vector(token, dim, seed));
    }
    TokenEmbeddings {
        tokenized,
        dim,
        values,
    }
}

/// Stand-in for a frozen encoder: token vectors are hashed character
/// trigrams, query vectors are the normalized sum of the query's token
/// vectors under the start and end seeds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceHashEmbedder {
    pub dim: usize,
    pub seed_start: u64,
    pub seed_end: u64,
}

impl Default for ReferenceHashEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIM)
    }
}

impl ReferenceHashEmbedder {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            seed_start: DEFAULT_SEED_START,
            seed_end: DEFAULT_SEED_END,
        }
    }

    pub fn with_seeds(mut self, seed_start: u64, seed_end: u64) -> Self {
        self.seed_start = seed_start;
        self.seed_end = seed_end;
        self
    }

    fn pooled(&self, text: &str, seed: u64) -> Vec<f32> {
        let tokens = reference_embed_tokens(text, self.dim, seed);
        let mut acc = vec![0.0f64; self.dim];
        for t in 0..tokens.len() {
            for (a, &v) in acc.iter_mut().zip(tokens.vector(t)) {
                *a += f64::from(v);
            }
        }
        let mut sq = 0.0f64;
        for a in &acc {
            sq += a * a;
        }
        let norm = sq.sqrt();
        if norm == 0.0 {
            return vec![0.0; self.dim];
        }
        acc.iter().map(|a| (a / norm) as f32).collect()
    }
}

impl EmbeddingProvider for ReferenceHashEmbedder {
    fn name(&self) -> &str {
        "reference-hash"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_tokens(&self, text: &str) -> Result<TokenEmbeddings> {
        if self.dim == 0 {
            return Err(Error::Config("reference embedder dimension must be at least 1".into()));
        }
        Ok(reference_embed_tokens(text, self.dim, self.seed_start))
    }

    fn embed_query_pair(&self, text: &str) -> Result<(Vec<f32>, Vec<f32>)> {
        if self.dim == 0 {
            return Err(Error::Config("reference embedder dimension must be at least 1".into()));
        }
        Ok((self.pooled(text, self.seed_start), self.pooled(text, self.seed_end)))
    }
}

// ---------------------------------------------------------------- remote provider

#[derive(Serialize)]
struct EmbedTokensRequest<'a> {
    texts: [&'a str; 1],
}

#[derive(Serialize)]
struct EmbedQueryRequest<'a> {
    queries: [&'a str; 1],
}

#[derive(Serialize, Deserialize)]
struct EmbedTokensResponse {
    d: usize,
    results: Vec<TokenResult>,
}

#[derive(Serialize, Deserialize)]
struct TokenResult {
    tokens: Vec<String>,
    spans: Vec<[usize; 2]>,
    vectors: Vec<Vec<f32>>,
}

#[derive(Serialize, Deserialize)]
struct EmbedQueryResponse {
    d: usize,
    results: Vec<QueryResult>,
}

#[derive(Serialize, Deserialize)]
struct QueryResult {
    q_start: Vec<f32>,
    q_end: Vec<f32>,
}

/// Client for a token-embedding service (`/embed_tokens`, `/embed_query`).
/// Responses are cached on disk so a warm cache answers without network.
pub struct RemoteEmbedder {
    client: HttpClient,
    endpoint: String,
    cache: DiskCache,
    dim: usize,
    name: String,
}

impl RemoteEmbedder {
    pub fn new(endpoint: impl Into<String>, dim: usize, cache: DiskCache) -> Self {
        let endpoint = endpoint.into();
        Self {
            client: HttpClient::default(),
            name: format!("remote:{endpoint}"),
            endpoint,
            cache,
            dim,
        }
    }

    pub fn client(&self) -> &HttpClient {
        &self.client
    }

    fn cache_key(&self, kind: &str, text: &str) -> String {
        sha256_hex(format!("{kind}\0{}\0{text}", self.dim).as_bytes())
    }

    /// Cached bytes, or a fresh response body that the caller must validate
    /// and then store.
    fn fetch(&self, kind: &str, text: &str, body: &impl Serialize) -> Result<(Vec<u8>, bool)> {
        if let Some(bytes) = self.cache.get(&self.cache_key(kind, text))? {
            return Ok((bytes, false));
        }
        let resp = self.client.post_json(&join(&self.endpoint, kind), body)?;
        if !resp.is_success() {
            return Err(status_error("embedding provider", &resp));
        }
        Ok((resp.body, true))
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.dim {
            return Err(Error::Protocol(format!("provider reports d = {d}, configured {}", self.dim)));
        }
        Ok(())
    }

    fn check_vector(&self, field: &str, v: &[f32]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::Protocol(format!("`{field}` has {} values, expected {}", v.len(), self.dim)));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Protocol(format!("`{field}` has non-finite values")));
        }
        Ok(())
    }

    fn parse_tokens(&self, text: &str, bytes: &[u8]) -> Result<TokenEmbeddings> {
        let de = &mut serde_json::Deserializer::from_slice(bytes);
        let resp: EmbedTokensResponse = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Protocol(format!("embed_tokens response `{}`: {}", e.path(), e.inner())))?;
        self.check_dim(resp.d)?;
        let [result]: [TokenResult; 1] = resp
            .results
            .try_into()
            .map_err(|_| Error::Protocol("embed_tokens `results` must hold exactly one entry".into()))?;
        let n = result.tokens.len();
        if result.spans.len() != n || result.vectors.len() != n {
            return Err(Error::Protocol(format!(
                "embed_tokens result has {n} tokens, {} spans, {} vectors",
                result.spans.len(),
                result.vectors.len()
            )));
        }
        let char_count = text.chars().count();
        let mut spans = Vec::with_capacity(n);
        let mut prev_end = 0;
        for (i, [s, e]) in result.spans.iter().copied().enumerate() {
            if s >= e || e > char_count || s < prev_end {
                return Err(Error::Protocol(format!(
                    "`results[0].spans[{i}]` = [{s}, {e}] is not increasing within {char_count} chars"
                )));
            }
            prev_end = e;
            spans.push(Span { start: s, end: e });
        }
        let mut values = Vec::with_capacity(n * self.dim);
        for (i, v) in result.vectors.iter().enumerate() {
            self.check_vector(&format!("results[0].vectors[{i}]"), v)?;
            values.extend_from_slice(v);
        }
        TokenEmbeddings::new(
            TokenizedText {
                tokens: result.tokens,
                char_spans: spans,
            },
            self.dim,
            values,
        )
    }

    fn parse_query(&self, bytes: &[u8]) -> Result<(Vec<f32>, Vec<f32>)> {
        let de = &mut serde_json::Deserializer::from_slice(bytes);
        let resp: EmbedQueryResponse = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Protocol(format!("embed_query response `{}`: {}", e.path(), e.inner())))?;
        self.check_dim(resp.d)?;
        let [result]: [QueryResult; 1] = resp
            .results
            .try_into()
            .map_err(|_| Error::Protocol("embed_query `results` must hold exactly one entry".into()))?;
        self.check_vector("results[0].q_start", &result.q_start)?;
        self.check_vector("results[0].q_end", &result.q_end)?;
        Ok((result.q_start, result.q_end))
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_tokens(&self, text: &str) -> Result<TokenEmbeddings> {
        let (bytes, fresh) = self.fetch("embed_tokens", text, &EmbedTokensRequest { texts: [text] })?;
        let parsed = self.parse_tokens(text, &bytes)?;
        if fresh {
            self.cache.put(&self.cache_key("embed_tokens", text), &bytes)?;
        }
        Ok(parsed)
    }

    fn embed_query_pair(&self, text: &str) -> Result<(Vec<f32>, Vec<f32>)> {
        let (bytes, fresh) = self.fetch("embed_query", text, &EmbedQueryRequest { queries: [text] })?;
        let parsed = self.parse_query(&bytes)?;
        if fresh {
            self.cache.put(&self.cache_key("embed_query", text), &bytes)?;
        }
        Ok(parsed)
    }
}
