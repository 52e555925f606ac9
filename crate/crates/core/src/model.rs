//! Shared domain types and the dataset / prediction JSON Lines schemas.

use std::{
    collections::HashSet,
    fmt,
    fs,
    io::{BufRead, BufReader, Write},
    path::{Path, PathBuf},
};

use serde::{Deserialize, Serialize};

use crate::{
    error::{Error, Result},
    text::{case_insensitive_occurrences, normalize_mention},
};

/// Half-open range of Unicode scalar offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start >= end {
            return Err(Error::Input(format!("empty or reversed span {start}..{end}")));
        }
        Ok(Self { start, end })
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }

    pub fn intersects(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn intersection_len(&self, other: &Span) -> usize {
        self.end.min(other.end).saturating_sub(self.start.max(other.start))
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    doc_id: String,
    text: String,
    /// Byte offset of every char, plus `text.len()` at the end.
    offsets: Vec<usize>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let doc_id = doc_id.into();
        let text = text.into();
        if doc_id.is_empty() {
            return Err(Error::Input("doc_id is empty".into()));
        }
        if text.is_empty() {
            return Err(Error::Input(format!("document {doc_id} has empty text")));
        }
        let mut offsets: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
        offsets.push(text.len());
        Ok(Self {
            doc_id,
            text,
            offsets,
        })
    }

    pub fn doc_id(&self) -> &str {
        &self.doc_id
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn char_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn chars(&self) -> Vec<char> {
        self.text.chars().collect()
    }

    pub fn contains(&self, span: Span) -> bool {
        span.start < span.end && span.end <= self.char_count()
    }

    /// Substring at `span`. Panics if the span is out of bounds; use
    /// [`Document::get`] for untrusted spans.
    pub fn slice(&self, span: Span) -> &str {
        self.get(span)
            .unwrap_or_else(|| panic!("span {span} outside document {}", self.doc_id))
    }

    pub fn get(&self, span: Span) -> Option<&str> {
        self.contains(span)
            .then(|| &self.text[self.offsets[span.start]..self.offsets[span.end]])
    }

    /// Builds a mention after checking the span against this document.
    pub fn mention(&self, span: Span, entity_id: impl Into<String>, link_confidence: f32) -> Result<Mention> {
        let entity_id = entity_id.into();
        let surface = self.get(span).ok_or_else(|| {
            Error::Input(format!(
                "mention span {span} outside document {} ({} chars)",
                self.doc_id,
                self.char_count()
            ))
        })?;
        if entity_id.is_empty() {
            return Err(Error::Input(format!("mention at {span} has empty entity_id")));
        }
        if !(0.0..=1.0).contains(&link_confidence) {
            return Err(Error::Input(format!(
                "mention at {span} has confidence {link_confidence} outside [0, 1]"
            )));
        }
        Ok(Mention {
            span,
            surface: surface.to_owned(),
            entity_id,
            link_confidence,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mention {
    pub span: Span,
    pub surface: String,
    pub entity_id: String,
    pub link_confidence: f32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeRecord {
    pub entity_id: String,
    pub title: String,
    /// External knowledge text; empty when nothing is known about the entity.
    pub description: String,
}

impl KnowledgeRecord {
    /// Record for an entity the store knows nothing about.
    pub fn missing(entity_id: &str) -> Self {
        Self {
            entity_id: entity_id.to_owned(),
            title: entity_id.to_owned(),
            description: String::new(),
        }
    }
}

/// A `2d`-dimensional vector: `[start; end]` halves of `d` values each.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() || values.len() % 2 != 0 {
            return Err(Error::Input(format!(
                "embedding has {} dims, expected a positive even count",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("embedding value {i} is not finite")));
        }
        Ok(Self(values))
    }

    pub fn zeros(dims: usize) -> Self {
        assert!(dims > 0 && dims % 2 == 0, "dims must be positive and even");
        Self(vec![0.0; dims])
    }

    /// `[start; end]`.
    pub fn concat(start: &[f32], end: &[f32]) -> Result<Self> {
        if start.len() != end.len() {
            return Err(Error::Input(format!(
                "half lengths differ: {} vs {}",
                start.len(),
                end.len()
            )));
        }
        let mut v = Vec::with_capacity(start.len() * 2);
        v.extend_from_slice(start);
        v.extend_from_slice(end);
        Self::new(v)
    }

    pub fn dims(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.0
    }

    pub fn halves(&self) -> (&[f32], &[f32]) {
        self.0.split_at(self.0.len() / 2)
    }

    pub fn scaled(&self, factor: f32) -> Self {
        Self(self.0.iter().map(|v| v * factor).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldMention {
    pub span: Option<Span>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuerySample {
    pub qid: String,
    pub doc_id: String,
    pub query: String,
    /// Document order; span-less targets (no occurrence found) come last.
    pub gold_mentions: Vec<GoldMention>,
    pub gold_entities: Vec<String>,
}

impl QuerySample {
    pub fn gold_texts(&self) -> Vec<&str> {
        self.gold_mentions.iter().map(|g| g.text.as_str()).collect()
    }

    pub fn gold_spans(&self) -> Vec<Span> {
        self.gold_mentions.iter().filter_map(|g| g.span).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub text: String,
    pub span: Option<Span>,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionList {
    pub qid: String,
    /// Rank order is list order.
    pub ranked: Vec<Prediction>,
}

impl PredictionList {
    pub fn texts(&self) -> Vec<&str> {
        self.ranked.iter().map(|p| p.text.as_str()).collect()
    }

    /// All prediction spans, or `None` if any prediction lacks one.
    pub fn spans(&self) -> Option<Vec<Span>> {
        self.ranked.iter().map(|p| p.span).collect()
    }
}

/// One line of the dataset file, fully validated.
#[derive(Debug, Clone)]
pub struct DocumentRecord {
    pub document: Document,
    pub queries: Vec<QuerySample>,
    /// Gold entity mentions, sorted by span.
    pub mentions: Vec<Mention>,
    pub knowledge: Vec<KnowledgeRecord>,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub records: Vec<DocumentRecord>,
}

impl Dataset {
    pub fn queries(&self) -> impl Iterator<Item = &QuerySample> {
        self.records.iter().flat_map(|r| r.queries.iter())
    }

    pub fn query_count(&self) -> usize {
        self.records.iter().map(|r| r.queries.len()).sum()
    }

    pub fn document(&self, doc_id: &str) -> Option<&DocumentRecord> {
        self.records.iter().find(|r| r.document.doc_id() == doc_id)
    }

    /// Mean number of gold mentions per query.
    pub fn mean_mentions_per_query(&self) -> f64 {
        let n = self.query_count();
        if n == 0 {
            return 0.0;
        }
        let total: usize = self.queries().map(|q| q.gold_mentions.len()).sum();
        total as f64 / n as f64
    }
}

// ---------------------------------------------------------------- wire schema

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetLine {
    doc_id: String,
    text: String,
    #[serde(default)]
    entities: Vec<EntityLine>,
    queries: Vec<QueryLine>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EntityLine {
    entity_id: String,
    title: String,
    #[serde(default)]
    mentions: Vec<SpanLine>,
    #[serde(default)]
    knowledge: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpanLine {
    start: usize,
    end: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryLine {
    qid: String,
    query: String,
    targets: Vec<TargetLine>,
    #[serde(default)]
    target_entities: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetLine {
    text: String,
    start: Option<usize>,
    end: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionLine {
    qid: String,
    predictions: Vec<PredictionItem>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionItem {
    text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    start: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    end: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

struct LineCtx<'a> {
    path: &'a Path,
    line: usize,
}

impl LineCtx<'_> {
    fn parse_err(&self, field: impl Into<String>, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            field: field.into(),
            message: message.into(),
        }
    }

    fn integrity(&self, field: &str, message: impl fmt::Display) -> Error {
        Error::Integrity(format!(
            "{}:{}: `{field}`: {message}",
            self.path.display(),
            self.line
        ))
    }

    fn decode<T: serde::de::DeserializeOwned>(&self, raw: &str) -> Result<T> {
        let de = &mut serde_json::Deserializer::from_str(raw);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            let inner = e.into_inner();
            self.parse_err(if field == "." { "<record>".into() } else { field }, inner.to_string())
        })
    }
}

/// Iterates non-blank lines with 1-based line numbers.
fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

/// Loads and cross-validates a dataset file.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut records = Vec::new();
    let mut doc_ids = HashSet::new();
    let mut qids = HashSet::new();
    for (line_no, raw) in read_lines(path)? {
        let ctx = LineCtx { path, line: line_no };
        let line: DatasetLine = ctx.decode(&raw)?;
        let record = build_record(&ctx, line)?;
        if !doc_ids.insert(record.document.doc_id().to_owned()) {
            return Err(ctx.integrity("doc_id", format!("duplicate doc_id {}", record.document.doc_id())));
        }
        for (i, q) in record.queries.iter().enumerate() {
            if !qids.insert(q.qid.clone()) {
                return Err(ctx.integrity(&format!("queries[{i}].qid"), format!("duplicate qid {}", q.qid)));
            }
        }
        records.push(record);
    }
    Ok(Dataset { records })
}

fn build_record(ctx: &LineCtx<'_>, line: DatasetLine) -> Result<DocumentRecord> {
    if line.doc_id.is_empty() {
        return Err(ctx.parse_err("doc_id", "must be non-empty"));
    }
    if line.text.is_empty() {
        return Err(ctx.parse_err("text", "must be non-empty"));
    }
    let document = Document::new(line.doc_id, line.text)?;
    let chars = document.chars();

    let mut mentions = Vec::new();
    let mut knowledge = Vec::new();
    for (ei, entity) in line.entities.into_iter().enumerate() {
        if entity.entity_id.is_empty() {
            return Err(ctx.parse_err(format!("entities[{ei}].entity_id"), "must be non-empty"));
        }
        for (mi, m) in entity.mentions.iter().enumerate() {
            let field = format!("entities[{ei}].mentions[{mi}]");
            let span = checked_span(ctx, &document, &field, m.start, m.end)?;
            mentions.push(document.mention(span, entity.entity_id.clone(), 1.0)?);
        }
        knowledge.push(KnowledgeRecord {
            entity_id: entity.entity_id,
            title: entity.title,
            description: entity.knowledge,
        });
    }
    mentions.sort_by(|a, b| a.span.cmp(&b.span).then_with(|| a.entity_id.cmp(&b.entity_id)));

    let mut queries = Vec::new();
    for (qi, q) in line.queries.into_iter().enumerate() {
        if q.qid.is_empty() {
            return Err(ctx.parse_err(format!("queries[{qi}].qid"), "must be non-empty"));
        }
        if q.targets.is_empty() {
            return Err(ctx.parse_err(format!("queries[{qi}].targets"), "must list at least one target"));
        }
        let gold_mentions = resolve_targets(ctx, &document, &chars, qi, &q.targets)?;
        queries.push(QuerySample {
            qid: q.qid,
            doc_id: document.doc_id().to_owned(),
            query: q.query,
            gold_mentions,
            gold_entities: q.target_entities,
        });
    }
    Ok(DocumentRecord {
        document,
        queries,
        mentions,
        knowledge,
    })
}

fn checked_span(ctx: &LineCtx<'_>, document: &Document, field: &str, start: usize, end: usize) -> Result<Span> {
    let span = Span { start, end };
    if !document.contains(span) {
        return Err(ctx.integrity(
            field,
            format!("span {span} invalid for document of {} chars", document.char_count()),
        ));
    }
    Ok(span)
}

/// Explicit spans are checked against the text; string-only targets expand to
/// every case-insensitive occurrence, once per distinct normalized string.
fn resolve_targets(
    ctx: &LineCtx<'_>,
    document: &Document,
    chars: &[char],
    qi: usize,
    targets: &[TargetLine],
) -> Result<Vec<GoldMention>> {
    let mut spanned: Vec<GoldMention> = Vec::new();
    let mut seen: HashSet<Span> = HashSet::new();
    let mut pending: Vec<&str> = Vec::new();

    for (ti, t) in targets.iter().enumerate() {
        let field = format!("queries[{qi}].targets[{ti}]");
        match (t.start, t.end) {
            (Some(start), Some(end)) => {
                let span = checked_span(ctx, document, &field, start, end)?;
                let actual = document.slice(span);
                if actual != t.text {
                    return Err(ctx.integrity(
                        &field,
                        format!("text {:?} does not match document text {actual:?} at {span}", t.text),
                    ));
                }
                if seen.insert(span) {
                    spanned.push(GoldMention {
                        span: Some(span),
                        text: t.text.clone(),
                    });
                }
            }
            (None, None) => pending.push(&t.text),
            (Some(_), None) => return Err(ctx.parse_err(format!("{field}.end"), "start given without end")),
            (None, Some(_)) => return Err(ctx.parse_err(format!("{field}.start"), "end given without start")),
        }
    }

    let mut spanless = Vec::new();
    let mut done = HashSet::new();
    for text in pending {
        if !done.insert(normalize_mention(text)) {
            continue;
        }
        let occurrences = case_insensitive_occurrences(chars, text);
        if occurrences.is_empty() {
            spanless.push(GoldMention {
                span: None,
                text: text.to_owned(),
            });
        }
        for (start, end) in occurrences {
            let span = Span { start, end };
            if seen.insert(span) {
                spanned.push(GoldMention {
                    span: Some(span),
                    text: document.slice(span).to_owned(),
                });
            }
        }
    }
    spanned.sort_by_key(|g| g.span);
    spanned.extend(spanless);
    Ok(spanned)
}

/// Loads a prediction dump.
pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionList>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for (line_no, raw) in read_lines(path)? {
        let ctx = LineCtx { path, line: line_no };
        let line: PredictionLine = ctx.decode(&raw)?;
        let mut ranked = Vec::with_capacity(line.predictions.len());
        let mut last_score: Option<f64> = None;
        for (i, p) in line.predictions.into_iter().enumerate() {
            let span = match (p.start, p.end) {
                (Some(start), Some(end)) if start < end => Some(Span { start, end }),
                (Some(_), Some(_)) => {
                    return Err(ctx.parse_err(format!("predictions[{i}]"), "start must be below end"))
                }
                (None, None) => None,
                _ => return Err(ctx.parse_err(format!("predictions[{i}]"), "start and end must come together")),
            };
            if let Some(score) = p.score {
                if !score.is_finite() {
                    return Err(ctx.parse_err(format!("predictions[{i}].score"), "must be finite"));
                }
                if last_score.is_some_and(|prev| score > prev) {
                    return Err(ctx.parse_err(format!("predictions[{i}].score"), "scores must be non-increasing"));
                }
                last_score = Some(score);
            }
            ranked.push(Prediction {
                text: p.text,
                span,
                score: p.score,
            });
        }
        out.push(PredictionList { qid: line.qid, ranked });
    }
    Ok(out)
}

/// One compact JSON line per prediction list.
pub fn render_prediction_line(list: &PredictionList) -> String {
    let line = PredictionLine {
        qid: list.qid.clone(),
        predictions: list
            .ranked
            .iter()
            .map(|p| PredictionItem {
                text: p.text.clone(),
                start: p.span.map(|s| s.start),
                end: p.span.map(|s| s.end),
                score: p.score,
            })
            .collect(),
    };
    serde_json::to_string(&line).expect("prediction lines always serialize")
}

pub fn write_predictions(path: impl AsRef<Path>, lists: &[PredictionList]) -> Result<()> {
    let path: PathBuf = path.as_ref().to_path_buf();
    let mut buf = Vec::new();
    for list in lists {
        buf.extend_from_slice(render_prediction_line(list).as_bytes());
        buf.push(b'\n');
    }
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn string_targets_expand_to_all_occurrences() {
        let f = write_tmp(
            r#"{"doc_id":"d","text":"A B A","queries":[{"qid":"q","query":"x","targets":[{"text":"A"}]}]}"#,
        );
        let ds = load_dataset(f.path()).unwrap();
        let q = &ds.records[0].queries[0];
        assert_eq!(
            q.gold_spans(),
            vec![Span { start: 0, end: 1 }, Span { start: 4, end: 5 }]
        );
    }

    #[test]
    fn case_variants_keep_document_casing() {
        let f = write_tmp(
            r#"{"doc_id":"d","text":"Baidu and BAIDU","queries":[{"qid":"q","query":"x","targets":[{"text":"baidu"},{"text":"Baidu"}]}]}"#,
        );
        let ds = load_dataset(f.path()).unwrap();
        assert_eq!(ds.records[0].queries[0].gold_texts(), vec!["Baidu", "BAIDU"]);
    }

    #[test]
    fn span_text_mismatch_is_integrity_error() {
        let f = write_tmp(
            r#"{"doc_id":"d","text":"hello world","queries":[{"qid":"q","query":"x","targets":[{"text":"world","start":0,"end":5}]}]}"#,
        );
        let err = load_dataset(f.path()).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)), "{err}");
        assert!(err.to_string().contains(":1:"), "{err}");
    }

    #[test]
    fn schema_violation_names_line_and_field() {
        let f = write_tmp(concat!(
            r#"{"doc_id":"d","text":"t","queries":[{"qid":"q","query":"x","targets":[{"text":"t"}]}]}"#,
            "\n\n",
            r#"{"doc_id":"e","text":"t","queries":[{"qid":"r","query":"x","targets":[{"text":"t","start":"0","end":1}]}]}"#,
        ));
        match load_dataset(f.path()).unwrap_err() {
            Error::Parse { line, field, .. } => {
                assert_eq!(line, 3);
                assert_eq!(field, "queries[0].targets[0].start");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_field_is_parse_error() {
        let f = write_tmp(r#"{"doc_id":"d","queries":[]}"#);
        match load_dataset(f.path()).unwrap_err() {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 1);
                assert!(message.contains("text"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn duplicate_doc_id_rejected() {
        let line = r#"{"doc_id":"d","text":"t","queries":[]}"#;
        let f = write_tmp(&format!("{line}\n{line}\n"));
        assert!(matches!(load_dataset(f.path()), Err(Error::Integrity(_))));
    }

    #[test]
    fn unicode_offsets_are_chars() {
        let f = write_tmp(
            r#"{"doc_id":"d","text":"Zürich-born fans","queries":[{"qid":"q","query":"x","targets":[{"text":"born","start":7,"end":11}]}]}"#,
        );
        let ds = load_dataset(f.path()).unwrap();
        assert_eq!(ds.records[0].queries[0].gold_texts(), vec!["born"]);
    }

    #[test]
    fn predictions_round_trip_and_reject_rising_scores() {
        let lists = vec![PredictionList {
            qid: "q".into(),
            ranked: vec![
                Prediction {
                    text: "a".into(),
                    span: Some(Span { start: 0, end: 1 }),
                    score: Some(2.5),
                },
                Prediction {
                    text: "b".into(),
                    span: None,
                    score: None,
                },
            ],
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        write_predictions(&path, &lists).unwrap();
        assert_eq!(load_predictions(&path).unwrap(), lists);

        let f = write_tmp(r#"{"qid":"q","predictions":[{"text":"a","score":1.0},{"text":"b","score":2.0}]}"#);
        assert!(matches!(load_predictions(f.path()), Err(Error::Parse { .. })));
    }

    #[test]
    fn embedding_vector_rejects_odd_and_non_finite() {
        assert!(EmbeddingVector::new(vec![1.0, 2.0, 3.0]).is_err());
        assert!(EmbeddingVector::new(vec![1.0, f32::NAN]).is_err());
        assert_eq!(EmbeddingVector::zeros(4).dims(), 4);
    }
}
