//! In-document phrase index: fused mention vectors scored by exact,
//! exhaustive maximum inner product search.

use std::{
    collections::{BTreeSet, HashMap, HashSet},
    fmt, fs,
    io::{Read, Write},
    path::Path,
    str::FromStr,
    time::Instant,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{
    embedding::{encode_knowledge, phrase_vector, EmbeddingProvider},
    error::{Error, Result},
    knowledge::KnowledgeSource,
    model::{Document, EmbeddingVector, KnowledgeRecord, Mention, Span},
};

pub const INDEX_MAGIC: &[u8; 6] = b"KTRLF1";
pub const DEFAULT_TOP_K: usize = 4;

/// Which embeddings go into an index entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    /// Phrase plus knowledge embedding.
    #[default]
    Both,
    /// Phrase embedding only; no external knowledge.
    PhraseOnly,
    /// Knowledge embedding only; no document context.
    KnowledgeOnly,
}

impl FusionMode {
    pub const ALL: [FusionMode; 3] = [FusionMode::Both, FusionMode::PhraseOnly, FusionMode::KnowledgeOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Both => "both",
            FusionMode::PhraseOnly => "phrase-only",
            FusionMode::KnowledgeOnly => "knowledge-only",
        }
    }

    fn to_byte(self) -> u8 {
        match self {
            FusionMode::Both => 0,
            FusionMode::PhraseOnly => 1,
            FusionMode::KnowledgeOnly => 2,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(FusionMode::Both),
            1 => Some(FusionMode::PhraseOnly),
            2 => Some(FusionMode::KnowledgeOnly),
            _ => None,
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(FusionMode::Both),
            "phrase-only" | "phrase_only" => Ok(FusionMode::PhraseOnly),
            "knowledge-only" | "knowledge_only" => Ok(FusionMode::KnowledgeOnly),
            other => Err(Error::Input(format!(
                "unknown fusion mode {other:?} (expected both, phrase-only or knowledge-only)"
            ))),
        }
    }
}

/// How search hits are cut down to the reported list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ThresholdPolicy {
    /// Keep the first `k` hits.
    #[default]
    #[serde(rename = "mention", alias = "mention-top-k")]
    MentionTopK,
    /// Keep every hit of the `k` best-scoring entities.
    #[serde(rename = "entity", alias = "entity-top-k")]
    EntityTopK,
}

impl FromStr for ThresholdPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mention" | "mention-top-k" => Ok(ThresholdPolicy::MentionTopK),
            "entity" | "entity-top-k" => Ok(ThresholdPolicy::EntityTopK),
            other => Err(Error::Input(format!("unknown threshold policy {other:?} (expected mention or entity)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchHit {
    pub mention: Mention,
    pub score: f64,
    /// 1-based position in the full MIPS ranking.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhraseIndex {
    document: Document,
    mode: FusionMode,
    dims: usize,
    mentions: Vec<Mention>,
    /// `mentions.len() * dims` values, one row per mention.
    vectors: Vec<f32>,
    build_ms: f64,
}

/// Phrase and knowledge vectors per mention, before fusion. Building all
/// three fusion modes from one set of components costs one encoding pass.
#[derive(Debug, Clone)]
pub struct IndexComponents {
    document: Document,
    mentions: Vec<Mention>,
    dims: usize,
    phrase: Vec<f32>,
    knowledge: Vec<f32>,
    build_ms: f64,
}

impl IndexComponents {
    /// Encodes every mention and every distinct entity once.
    ///
    /// Knowledge lookup failures degrade to an empty description; provider
    /// failures abort the build.
    pub fn compute(
        document: &Document,
        mentions: Vec<Mention>,
        knowledge: &dyn KnowledgeSource,
        provider: &dyn EmbeddingProvider,
    ) -> Result<Self> {
        let started = Instant::now();
        let mentions = checked_mentions(document, mentions)?;
        let dims = 2 * provider.dim();
        if dims == 0 {
            return Err(Error::Config("provider dimension must be at least 1".into()));
        }

        let tokens = provider.embed_tokens(document.text())?;
        if tokens.dim() != provider.dim() {
            return Err(Error::Encoding(format!(
                "provider returned {}-dim tokens, advertised {}",
                tokens.dim(),
                provider.dim()
            )));
        }
        let mut phrase = Vec::with_capacity(mentions.len() * dims);
        for m in &mentions {
            phrase.extend_from_slice(phrase_vector(&tokens, document, m.span)?.as_slice());
        }

        let entities: Vec<&str> = mentions
            .iter()
            .map(|m| m.entity_id.as_str())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let encoded: Vec<(&str, EmbeddingVector)> = entities
            .par_iter()
            .map(|&id| {
                let record = knowledge.get_knowledge(id).unwrap_or_else(|e| {
                    tracing::warn!(entity_id = id, error = %e, "knowledge unavailable, using title only");
                    KnowledgeRecord::missing(id)
                });
                let v = encode_knowledge(provider, &record)?;
                if v.dims() != dims {
                    return Err(Error::Encoding(format!("knowledge vector for {id} has {} dims", v.dims())));
                }
                Ok((id, v))
            })
            .collect::<Result<_>>()?;
        let by_entity: HashMap<&str, &EmbeddingVector> = encoded.iter().map(|(id, v)| (*id, v)).collect();
        let mut knowledge_rows = Vec::with_capacity(mentions.len() * dims);
        for m in &mentions {
            knowledge_rows.extend_from_slice(by_entity[m.entity_id.as_str()].as_slice());
        }

        Ok(Self {
            document: document.clone(),
            mentions,
            dims,
            phrase,
            knowledge: knowledge_rows,
            build_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Components from precomputed vectors, one phrase and one knowledge
    /// vector per mention.
    pub fn from_parts(
        document: &Document,
        mentions: Vec<Mention>,
        phrase: &[EmbeddingVector],
        knowledge: &[EmbeddingVector],
    ) -> Result<Self> {
        if phrase.len() != mentions.len() || knowledge.len() != mentions.len() {
            return Err(Error::Input(format!(
                "{} mentions, {} phrase vectors, {} knowledge vectors",
                mentions.len(),
                phrase.len(),
                knowledge.len()
            )));
        }
        let dims = phrase.first().or(knowledge.first()).map_or(2, EmbeddingVector::dims);
        if phrase.iter().chain(knowledge).any(|v| v.dims() != dims) {
            return Err(Error::Input("vectors disagree on dims".into()));
        }
        let mut order: Vec<usize> = (0..mentions.len()).collect();
        order.sort_by_key(|&i| mentions[i].span);
        let mentions_sorted: Vec<Mention> = order.iter().map(|&i| mentions[i].clone()).collect();
        let mentions_sorted = checked_mentions(document, mentions_sorted)?;
        Ok(Self {
            document: document.clone(),
            dims,
            phrase: order.iter().flat_map(|&i| phrase[i].as_slice().iter().copied()).collect(),
            knowledge: order.iter().flat_map(|&i| knowledge[i].as_slice().iter().copied()).collect(),
            mentions: mentions_sorted,
            build_ms: 0.0,
        })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn build_ms(&self) -> f64 {
        self.build_ms
    }

    /// Element-wise fusion into an index. With `normalize`, every fused row
    /// is scaled to unit L2 norm (zero rows stay zero).
    pub fn fuse(&self, mode: FusionMode, normalize: bool) -> PhraseIndex {
        let started = Instant::now();
        let mut vectors = match mode {
            FusionMode::Both => self.phrase.iter().zip(&self.knowledge).map(|(p, k)| p + k).collect(),
            FusionMode::PhraseOnly => self.phrase.clone(),
            FusionMode::KnowledgeOnly => self.knowledge.clone(),
        };
        if normalize {
            for row in vectors.chunks_exact_mut(self.dims) {
                let norm = row.iter().map(|v| f64::from(*v).powi(2)).sum::<f64>().sqrt();
                if norm > 0.0 {
                    row.iter_mut().for_each(|v| *v = (f64::from(*v) / norm) as f32);
                }
            }
        }
        PhraseIndex {
            document: self.document.clone(),
            mode,
            dims: self.dims,
            mentions: self.mentions.clone(),
            vectors,
            build_ms: self.build_ms + started.elapsed().as_secs_f64() * 1e3,
        }
    }
}

fn checked_mentions(document: &Document, mut mentions: Vec<Mention>) -> Result<Vec<Mention>> {
    for m in &mentions {
        match document.get(m.span) {
            Some(surface) if surface == m.surface => {}
            Some(surface) => {
                return Err(Error::Input(format!(
                    "mention surface {:?} does not match document text {surface:?} at {}",
                    m.surface, m.span
                )))
            }
            None => {
                return Err(Error::Input(format!(
                    "mention span {} outside document {}",
                    m.span,
                    document.doc_id()
                )))
            }
        }
    }
    mentions.sort_by_key(|m| m.span);
    Ok(mentions)
}

/// Links nothing itself: encodes the given mentions, fuses, and records the
/// wall time in `build_ms`.
pub fn build_index(
    document: &Document,
    mentions: Vec<Mention>,
    knowledge: &dyn KnowledgeSource,
    provider: &dyn EmbeddingProvider,
    mode: FusionMode,
) -> Result<PhraseIndex> {
    Ok(IndexComponents::compute(document, mentions, knowledge, provider)?.fuse(mode, false))
}

/// Sequential f64 accumulation of f32 products. Products of two f32 values
/// are exact in f64, so only the additions round.
pub fn inner_product(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += f64::from(*x) * f64::from(*y);
    }
    acc
}

impl PhraseIndex {
    pub fn doc_id(&self) -> &str {
        self.document.doc_id()
    }

    pub fn document(&self) -> &Document {
        &self.document
    }

    pub fn mode(&self) -> FusionMode {
        self.mode
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.mentions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mentions.is_empty()
    }

    pub fn mentions(&self) -> &[Mention] {
        &self.mentions
    }

    pub fn entity_count(&self) -> usize {
        self.mentions.iter().map(|m| m.entity_id.as_str()).collect::<HashSet<_>>().len()
    }

    pub fn vector(&self, entry: usize) -> &[f32] {
        &self.vectors[entry * self.dims..(entry + 1) * self.dims]
    }

    pub fn build_ms(&self) -> f64 {
        self.build_ms
    }

    /// Exhaustive inner products, sorted by score (descending), then span
    /// start, then span end. Hits below `score_floor` are dropped and at most
    /// `top_k` are returned.
    pub fn search(&self, query: &EmbeddingVector, top_k: usize, score_floor: Option<f64>) -> Result<Vec<SearchHit>> {
        if query.dims() != self.dims {
            return Err(Error::Input(format!(
                "query has {} dims, index {} has {}",
                query.dims(),
                self.doc_id(),
                self.dims
            )));
        }
        if top_k == 0 {
            return Err(Error::Input("top_k must be at least 1".into()));
        }
        let q = query.as_slice();
        let mut scored: Vec<(f64, usize)> = self
            .vectors
            .chunks_exact(self.dims)
            .map(|row| inner_product(q, row))
            .zip(0..)
            .collect();
        scored.sort_by(|(sa, a), (sb, b)| {
            sb.partial_cmp(sa)
                .expect("scores of finite vectors are never NaN")
                .then(self.mentions[*a].span.start.cmp(&self.mentions[*b].span.start))
                .then(self.mentions[*a].span.end.cmp(&self.mentions[*b].span.end))
        });
        Ok(scored
            .into_iter()
            .enumerate()
            .take_while(|(_, (score, _))| score_floor.is_none_or(|floor| *score >= floor))
            .take(top_k)
            .map(|(pos, (score, i))| SearchHit {
                mention: self.mentions[i].clone(),
                score,
                rank: pos + 1,
            })
            .collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_to(&mut buf).map_err(|e| Error::io(path, e))?;
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Layout, all integers little-endian:
    ///
    /// ```text
    /// "KTRLF1" | dims u32 | mode u8 | entry_count u32
    /// entry_count × { start u32 | end u32 | entity_id (u32 len + UTF-8)
    ///                 | confidence f32 | dims × f32 }
    /// doc_id (u32 len + UTF-8) | text (u32 len + UTF-8)
    /// ```
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(INDEX_MAGIC)?;
        w.write_all(&u32_of(self.dims).to_le_bytes())?;
        w.write_all(&[self.mode.to_byte()])?;
        w.write_all(&u32_of(self.mentions.len()).to_le_bytes())?;
        for (i, m) in self.mentions.iter().enumerate() {
            w.write_all(&u32_of(m.span.start).to_le_bytes())?;
            w.write_all(&u32_of(m.span.end).to_le_bytes())?;
            write_str(w, &m.entity_id)?;
            w.write_all(&m.link_confidence.to_le_bytes())?;
            for v in self.vector(i) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        write_str(w, self.doc_id())?;
        write_str(w, self.document.text())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 6];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != INDEX_MAGIC {
            return Err(Error::Format(format!("bad magic {:?}, expected {:?}", magic, INDEX_MAGIC)));
        }
        let dims = read_u32(&mut r, "dims")? as usize;
        if dims == 0 || dims % 2 != 0 {
            return Err(Error::Format(format!("dims {dims} must be positive and even")));
        }
        let mut mode = [0u8; 1];
        read_exact(&mut r, &mut mode, "mode")?;
        let mode = FusionMode::from_byte(mode[0]).ok_or_else(|| Error::Format(format!("unknown mode byte {}", mode[0])))?;
        let count = read_u32(&mut r, "entry_count")? as usize;

        let mut raw = Vec::with_capacity(count.min(1 << 16));
        let mut vectors = Vec::with_capacity(count.min(1 << 16) * dims);
        for i in 0..count {
            let start = read_u32(&mut r, "start")? as usize;
            let end = read_u32(&mut r, "end")? as usize;
            let entity_id = read_str(&mut r, "entity_id")?;
            let mut conf = [0u8; 4];
            read_exact(&mut r, &mut conf, "confidence")?;
            let confidence = f32::from_le_bytes(conf);
            for _ in 0..dims {
                let mut v = [0u8; 4];
                read_exact(&mut r, &mut v, "vector")?;
                let v = f32::from_le_bytes(v);
                if !v.is_finite() {
                    return Err(Error::Format(format!("entry {i} holds a non-finite value")));
                }
                vectors.push(v);
            }
            raw.push((Span { start, end }, entity_id, confidence));
        }
        let doc_id = read_str(&mut r, "doc_id")?;
        let text = read_str(&mut r, "text")?;
        if !r.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes", r.len())));
        }
        let document = Document::new(doc_id, text).map_err(|e| Error::Format(e.to_string()))?;
        let mut mentions = Vec::with_capacity(raw.len());
        for (i, (span, entity_id, confidence)) in raw.into_iter().enumerate() {
            let m = document
                .mention(span, entity_id, confidence)
                .map_err(|e| Error::Format(format!("entry {i}: {e}")))?;
            if mentions.last().is_some_and(|prev: &Mention| prev.span > m.span) {
                return Err(Error::Format(format!("entry {i} out of span order")));
            }
            mentions.push(m);
        }
        Ok(Self {
            document,
            mode,
            dims,
            mentions,
            vectors,
            build_ms: 0.0,
        })
    }
}

/// Cuts sorted hits down per `policy`. With [`ThresholdPolicy::EntityTopK`],
/// the `k` entities with the best hits are kept together with all their
/// hits, in the original rank order.
pub fn apply_threshold(hits: Vec<SearchHit>, policy: ThresholdPolicy, k: usize) -> Vec<SearchHit> {
    match policy {
        ThresholdPolicy::MentionTopK => hits.into_iter().take(k).collect(),
        ThresholdPolicy::EntityTopK => {
            let mut keep: Vec<&str> = Vec::with_capacity(k);
            for h in &hits {
                if keep.len() == k {
                    break;
                }
                if !keep.contains(&h.mention.entity_id.as_str()) {
                    keep.push(&h.mention.entity_id);
                }
            }
            let keep: HashSet<String> = keep.into_iter().map(str::to_owned).collect();
            hits.into_iter().filter(|h| keep.contains(&h.mention.entity_id)).collect()
        }
    }
}

fn u32_of(n: usize) -> u32 {
    u32::try_from(n).expect("index field exceeds u32")
}

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_all(&u32_of(s.len()).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_exact(r: &mut &[u8], buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format(format!("truncated file while reading {what}")))
}

fn read_u32(r: &mut &[u8], what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_str(r: &mut &[u8], what: &str) -> Result<String> {
    let len = read_u32(r, what)? as usize;
    if len > r.len() {
        return Err(Error::Format(format!("truncated file while reading {what}")));
    }
    let (head, tail) = r.split_at(len);
    *r = tail;
    String::from_utf8(head.to_vec()).map_err(|_| Error::Format(format!("{what} is not UTF-8")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{embedding::ReferenceHashEmbedder, knowledge::KnowledgeStore};

    fn doc() -> Document {
        Document::new("d", "WeChat and Weibo and WeChat again").unwrap()
    }

    fn mention(d: &Document, s: usize, e: usize, id: &str) -> Mention {
        d.mention(Span { start: s, end: e }, id, 1.0).unwrap()
    }

    fn ev(v: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(v.to_vec()).unwrap()
    }

    fn hit(start: usize, id: &str, rank: usize) -> SearchHit {
        let d = Document::new("x", "a".repeat(40)).unwrap();
        SearchHit {
            mention: mention(&d, start, start + 1, id),
            score: -(rank as f64),
            rank,
        }
    }

    #[test]
    fn two_entries_by_hand() {
        let d = doc();
        let ms = vec![mention(&d, 0, 6, "A"), mention(&d, 11, 16, "B")];
        let c = IndexComponents::from_parts(&d, ms, &[ev(&[1.0, 0.0]), ev(&[0.0, 1.0])], &[ev(&[0.0, 0.0]), ev(&[0.0, 0.0])])
            .unwrap();
        let idx = c.fuse(FusionMode::Both, false);
        let hits = idx.search(&ev(&[2.0, 1.0]), 2, None).unwrap();
        assert_eq!(hits.iter().map(|h| (h.mention.entity_id.as_str(), h.score, h.rank)).collect::<Vec<_>>(), vec![("A", 2.0, 1), ("B", 1.0, 2)]);
    }

    #[test]
    fn ties_break_by_position() {
        let d = Document::new("d", "x".repeat(20)).unwrap();
        let ms = vec![mention(&d, 10, 15, "late"), mention(&d, 3, 8, "early")];
        let v = ev(&[1.0, 1.0]);
        let idx = IndexComponents::from_parts(&d, ms, &[v.clone(), v.clone()], &[v.clone(), v.clone()])
            .unwrap()
            .fuse(FusionMode::PhraseOnly, false);
        let hits = idx.search(&v, 2, None).unwrap();
        assert_eq!(hits[0].mention.span, Span { start: 3, end: 8 });
    }

    #[test]
    fn empty_index_and_errors() {
        let d = doc();
        let p = ReferenceHashEmbedder::new(4);
        let idx = build_index(&d, vec![], &KnowledgeStore::memory([]), &p, FusionMode::Both).unwrap();
        assert!(idx.is_empty());
        assert!(idx.search(&EmbeddingVector::zeros(8), 4, None).unwrap().is_empty());
        assert!(matches!(idx.search(&EmbeddingVector::zeros(6), 4, None), Err(Error::Input(_))));
        assert!(matches!(idx.search(&EmbeddingVector::zeros(8), 0, None), Err(Error::Input(_))));
    }

    #[test]
    fn score_floor_drops_low_hits() {
        let d = doc();
        let ms = vec![mention(&d, 0, 6, "A"), mention(&d, 11, 16, "B")];
        let idx = IndexComponents::from_parts(&d, ms, &[ev(&[1.0, 0.0]), ev(&[0.0, 1.0])], &[ev(&[0.0, 0.0]), ev(&[0.0, 0.0])])
            .unwrap()
            .fuse(FusionMode::PhraseOnly, false);
        let hits = idx.search(&ev(&[2.0, 1.0]), 4, Some(1.5)).unwrap();
        assert_eq!(hits.len(), 1);
    }

    #[test]
    fn threshold_policies() {
        let hits: Vec<SearchHit> = (0..10).map(|i| hit(i, &format!("E{i}"), i + 1)).collect();
        assert_eq!(apply_threshold(hits.clone(), ThresholdPolicy::MentionTopK, 4), hits[..4].to_vec());
        assert_eq!(apply_threshold(hits.clone(), ThresholdPolicy::MentionTopK, 40), hits);

        let mixed = vec![hit(0, "E1", 1), hit(1, "E2", 2), hit(2, "E1", 3)];
        let kept = apply_threshold(mixed.clone(), ThresholdPolicy::EntityTopK, 1);
        assert_eq!(kept.iter().map(|h| h.rank).collect::<Vec<_>>(), vec![1, 3]);
        assert_eq!(apply_threshold(mixed.clone(), ThresholdPolicy::EntityTopK, 5), mixed);
    }

    #[test]
    fn knowledge_computed_once_per_entity() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        struct Counting(AtomicUsize);
        impl KnowledgeSource for Counting {
            fn get_knowledge(&self, id: &str) -> Result<KnowledgeRecord> {
                self.0.fetch_add(1, Ordering::SeqCst);
                Ok(KnowledgeRecord::missing(id))
            }
        }
        let d = doc();
        let ms = vec![mention(&d, 0, 6, "WeChat"), mention(&d, 11, 16, "Weibo"), mention(&d, 21, 27, "WeChat")];
        let src = Counting(AtomicUsize::new(0));
        let p = ReferenceHashEmbedder::new(8);
        let c = IndexComponents::compute(&d, ms, &src, &p).unwrap();
        assert_eq!(src.0.load(Ordering::SeqCst), 2);
        let k = c.fuse(FusionMode::KnowledgeOnly, false);
        assert_eq!(k.vector(0), k.vector(2));
    }

    #[test]
    fn both_is_phrase_plus_knowledge() {
        let d = doc();
        let ms = vec![mention(&d, 0, 6, "WeChat"), mention(&d, 11, 16, "Weibo")];
        let p = ReferenceHashEmbedder::new(8);
        let c = IndexComponents::compute(&d, ms, &KnowledgeStore::memory([]), &p).unwrap();
        let (both, ph, kn) = (c.fuse(FusionMode::Both, false), c.fuse(FusionMode::PhraseOnly, false), c.fuse(FusionMode::KnowledgeOnly, false));
        for i in 0..2 {
            let sum: Vec<f32> = ph.vector(i).iter().zip(kn.vector(i)).map(|(a, b)| a + b).collect();
            assert_eq!(both.vector(i), &sum[..]);
        }
    }

    #[test]
    fn normalized_rows_have_unit_norm() {
        let d = doc();
        let ms = vec![mention(&d, 0, 6, "WeChat")];
        let c = IndexComponents::compute(&d, ms, &KnowledgeStore::memory([]), &ReferenceHashEmbedder::new(8)).unwrap();
        let idx = c.fuse(FusionMode::Both, true);
        let norm: f64 = idx.vector(0).iter().map(|v| f64::from(*v).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn bad_magic_rejected() {
        let d = doc();
        let idx = build_index(&d, vec![mention(&d, 0, 6, "A")], &KnowledgeStore::memory([]), &ReferenceHashEmbedder::new(4), FusionMode::Both).unwrap();
        let mut bytes = idx.to_bytes();
        assert_eq!(PhraseIndex::from_bytes(&bytes).unwrap().to_bytes(), bytes);
        bytes[0] = b'X';
        assert!(matches!(PhraseIndex::from_bytes(&bytes), Err(Error::Format(_))));
        assert!(matches!(PhraseIndex::from_bytes(&idx.to_bytes()[..20]), Err(Error::Format(_))));
    }

    #[test]
    fn mode_strings() {
        for m in FusionMode::ALL {
            assert_eq!(m.as_str().parse::<FusionMode>().unwrap(), m);
        }
        assert!("neither".parse::<FusionMode>().is_err());
    }
}
