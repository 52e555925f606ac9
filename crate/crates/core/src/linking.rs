//! Candidate-target extraction: find entity mentions in a document and map
//! each one to a knowledge-base id.

use std::{
    collections::HashMap,
    fs,
    io::{BufRead, BufReader},
    path::Path,
};

use serde::{Deserialize, Serialize};

use crate::{
    cache::{sha256_hex, DiskCache},
    error::{Error, Result},
    http::{join, status_error, HttpClient},
    model::{Document, Mention, Span},
    text::{normalize_mention, word_runs},
};

pub trait EntityLinker: Send + Sync {
    /// Non-overlapping mentions sorted by start offset.
    fn link(&self, document: &Document) -> Result<Vec<Mention>>;
}

/// Dictionary linker: case-insensitive, word-aligned, leftmost-longest.
#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    entries: HashMap<String, String>,
    max_phrase_tokens: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GazetteerLine {
    surface: String,
    entity_id: String,
}

impl Gazetteer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<S: AsRef<str>, E: AsRef<str>>(pairs: impl IntoIterator<Item = (S, E)>) -> Result<Self> {
        let mut g = Self::new();
        for (surface, entity_id) in pairs {
            g.insert(surface.as_ref(), entity_id.as_ref())?;
        }
        Ok(g)
    }

    /// When a surface is already present the lexicographically smaller
    /// entity id wins, so insertion order never matters.
    pub fn insert(&mut self, surface: &str, entity_id: &str) -> Result<()> {
        let key = normalize_mention(surface);
        if key.is_empty() {
            return Err(Error::Input(format!("gazetteer surface {surface:?} normalizes to nothing")));
        }
        if entity_id.is_empty() {
            return Err(Error::Input(format!("gazetteer surface {surface:?} has empty entity_id")));
        }
        let chars: Vec<char> = key.chars().collect();
        let tokens = word_runs(&chars).len();
        if tokens == 0 {
            return Err(Error::Input(format!("gazetteer surface {surface:?} has no word characters")));
        }
        self.max_phrase_tokens = self.max_phrase_tokens.max(tokens);
        self.entries
            .entry(key)
            .and_modify(|cur| {
                if entity_id < cur.as_str() {
                    *cur = entity_id.to_owned();
                }
            })
            .or_insert_with(|| entity_id.to_owned());
        Ok(())
    }

    /// Reads JSON Lines of `{"surface", "entity_id"}`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut g = Self::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |field: String, message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                field,
                message,
            };
            let de = &mut serde_json::Deserializer::from_str(&line);
            let rec: GazetteerLine = serde_path_to_error::deserialize(de)
                .map_err(|e| parse_err(e.path().to_string(), e.into_inner().to_string()))?;
            g.insert(&rec.surface, &rec.entity_id)
                .map_err(|e| parse_err("surface".into(), e.to_string()))?;
        }
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_phrase_tokens(&self) -> usize {
        self.max_phrase_tokens
    }

    pub fn get(&self, surface: &str) -> Option<&str> {
        self.entries.get(&normalize_mention(surface)).map(String::as_str)
    }
}

impl EntityLinker for Gazetteer {
    fn link(&self, document: &Document) -> Result<Vec<Mention>> {
        if self.entries.is_empty() {
            return Ok(Vec::new());
        }
        let chars = document.chars();
        let runs = word_runs(&chars);
        let mut out = Vec::new();
        let mut i = 0;
        while i < runs.len() {
            let start = runs[i].0;
            let last = (i + self.max_phrase_tokens).min(runs.len());
            let mut best: Option<(usize, &str)> = None;
            for (j, &(_, end)) in runs.iter().enumerate().take(last).skip(i) {
                let candidate: String = chars[start..end].iter().collect();
                if let Some(id) = self.entries.get(&normalize_mention(&candidate)) {
                    best = Some((j, id));
                }
            }
            match best {
                Some((j, id)) => {
                    out.push(document.mention(Span { start, end: runs[j].1 }, id, 1.0)?);
                    i = j + 1;
                }
                None => i += 1,
            }
        }
        Ok(out)
    }
}

/// Keeps a non-overlapping subset: leftmost first, then longest, then the
/// smaller entity id. Output is sorted by start.
pub fn resolve_overlaps(mut mentions: Vec<Mention>) -> Vec<Mention> {
    mentions.sort_by(|a, b| {
        a.span
            .start
            .cmp(&b.span.start)
            .then(b.span.end.cmp(&a.span.end))
            .then_with(|| a.entity_id.cmp(&b.entity_id))
    });
    let mut out: Vec<Mention> = Vec::with_capacity(mentions.len());
    for m in mentions {
        if out.last().is_none_or(|prev| prev.span.end <= m.span.start) {
            out.push(m);
        }
    }
    out
}

#[derive(Serialize)]
struct LinkRequest<'a> {
    text: &'a str,
}

#[derive(Serialize, Deserialize)]
struct LinkResponse {
    mentions: Vec<RemoteMention>,
}

#[derive(Serialize, Deserialize)]
struct RemoteMention {
    start: usize,
    end: usize,
    entity_id: String,
    #[serde(default)]
    title: String,
    confidence: f32,
}

/// Client for `POST {endpoint}/link`, cached by SHA-256 of the document text.
pub struct RemoteLinker {
    client: HttpClient,
    endpoint: String,
    cache: DiskCache,
    min_confidence: f32,
}

impl RemoteLinker {
    pub fn new(endpoint: impl Into<String>, cache: DiskCache) -> Self {
        Self {
            client: HttpClient::default(),
            endpoint: endpoint.into(),
            cache,
            min_confidence: 0.0,
        }
    }

    pub fn with_min_confidence(mut self, min_confidence: f32) -> Self {
        self.min_confidence = min_confidence;
        self
    }

    pub fn client(&self) -> &HttpClient {
        &self.client
    }

    fn parse(&self, document: &Document, body: &[u8]) -> Result<Vec<Mention>> {
        let de = &mut serde_json::Deserializer::from_slice(body);
        let resp: LinkResponse = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Protocol(format!("link response `{}`: {}", e.path(), e.inner())))?;
        let mut mentions = Vec::with_capacity(resp.mentions.len());
        for (i, m) in resp.mentions.into_iter().enumerate() {
            let span = Span { start: m.start, end: m.end };
            if !document.contains(span) {
                return Err(Error::Protocol(format!(
                    "link response `mentions[{i}]`: span {span} outside document of {} chars",
                    document.char_count()
                )));
            }
            if m.entity_id.is_empty() {
                return Err(Error::Protocol(format!("link response `mentions[{i}].entity_id` is empty")));
            }
            if !(0.0..=1.0).contains(&m.confidence) {
                return Err(Error::Protocol(format!(
                    "link response `mentions[{i}].confidence` = {} outside [0, 1]",
                    m.confidence
                )));
            }
            if m.confidence >= self.min_confidence {
                mentions.push(document.mention(span, m.entity_id, m.confidence)?);
            }
        }
        Ok(resolve_overlaps(mentions))
    }
}

impl EntityLinker for RemoteLinker {
    fn link(&self, document: &Document) -> Result<Vec<Mention>> {
        let key = sha256_hex(document.text().as_bytes());
        if let Some(body) = self.cache.get(&key)? {
            return self.parse(document, &body);
        }
        let url = join(&self.endpoint, "link");
        let resp = self.client.post_json(&url, &LinkRequest { text: document.text() })?;
        if !resp.is_success() {
            return Err(status_error("entity linker", &resp));
        }
        let mentions = self.parse(document, &resp.body)?;
        self.cache.put(&key, &resp.body)?;
        Ok(mentions)
    }
}
