//! Multi-span evaluation: list and set EM/overlap F1, robustness,
//! AP at an IoU threshold, corpus reports and the latency harness.

use std::{
    collections::{BTreeMap, HashMap, HashSet},
    fmt::Write as _,
    time::Instant,
};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::Serialize;

use crate::{
    error::{Error, Result},
    model::{Dataset, PredictionList, Span},
    text::normalize_mention,
};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// F1 from precision and recall numerators, with the empty-list
/// conventions: both empty → 1, one empty → 0, P + R = 0 → 0.
fn f1(tp_precision: f64, tp_recall: f64, n_pred: usize, n_gold: usize) -> f64 {
    if n_pred == 0 && n_gold == 0 {
        return 1.0;
    }
    if n_pred == 0 || n_gold == 0 {
        return 0.0;
    }
    let p = tp_precision / n_pred as f64;
    let r = tp_recall / n_gold as f64;
    if p + r == 0.0 {
        return 0.0;
    }
    2.0 * p * r / (p + r)
}

fn normalized<S: AsRef<str>>(xs: &[S]) -> Vec<String> {
    xs.iter().map(|x| normalize_mention(x.as_ref())).collect()
}

/// Multiset-matching F1 over normalized strings.
pub fn list_em_f1<P: AsRef<str>, G: AsRef<str>>(pred: &[P], gold: &[G]) -> f64 {
    let (p, g) = (normalized(pred), normalized(gold));
    let mut remaining: HashMap<&str, usize> = HashMap::new();
    for x in &g {
        *remaining.entry(x).or_default() += 1;
    }
    let mut tp = 0usize;
    for x in &p {
        if let Some(n) = remaining.get_mut(x.as_str()).filter(|n| **n > 0) {
            *n -= 1;
            tp += 1;
        }
    }
    f1(tp as f64, tp as f64, p.len(), g.len())
}

/// 1 when the normalized lists are equal as multisets, else 0.
pub fn list_em_binary<P: AsRef<str>, G: AsRef<str>>(pred: &[P], gold: &[G]) -> f64 {
    let (mut p, mut g) = (normalized(pred), normalized(gold));
    p.sort_unstable();
    g.sort_unstable();
    if p == g {
        1.0
    } else {
        0.0
    }
}

/// Length of the longest common substring, in chars.
fn longest_common_substring(a: &[char], b: &[char]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    let mut best = 0;
    for &ca in a {
        for (j, &cb) in b.iter().enumerate() {
            cur[j + 1] = if ca == cb { prev[j] + 1 } else { 0 };
            best = best.max(cur[j + 1]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    best
}

/// Longest common substring over the longer length; two empty strings
/// overlap fully.
pub fn string_overlap(a: &str, b: &str) -> f64 {
    let (a, b): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    longest_common_substring(&a, &b) as f64 / longest as f64
}

/// Partial-credit F1: each element scores its best overlap on the other side.
pub fn list_overlap_f1<P: AsRef<str>, G: AsRef<str>>(pred: &[P], gold: &[G]) -> f64 {
    let (p, g) = (normalized(pred), normalized(gold));
    if p.is_empty() || g.is_empty() {
        return f1(0.0, 0.0, p.len(), g.len());
    }
    let table: Vec<Vec<f64>> = p.iter().map(|x| g.iter().map(|y| string_overlap(x, y)).collect()).collect();
    let mut sum_p = 0.0;
    for row in &table {
        sum_p += row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    }
    let mut sum_r = 0.0;
    for j in 0..g.len() {
        sum_r += table.iter().map(|row| row[j]).fold(f64::NEG_INFINITY, f64::max);
    }
    f1(sum_p, sum_r, p.len(), g.len())
}

/// Normalized strings with duplicates removed, first occurrence kept.
pub fn dedup_normalized<S: AsRef<str>>(xs: &[S]) -> Vec<String> {
    let mut seen = HashSet::new();
    normalized(xs).into_iter().filter(|x| seen.insert(x.clone())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetScores {
    pub set_em_f1: f64,
    pub set_overlap_f1: f64,
}

pub fn set_scores<P: AsRef<str>, G: AsRef<str>>(pred: &[P], gold: &[G]) -> SetScores {
    let (p, g) = (dedup_normalized(pred), dedup_normalized(gold));
    SetScores {
        set_em_f1: list_em_f1(&p, &g),
        set_overlap_f1: list_overlap_f1(&p, &g),
    }
}

pub fn span_iou(a: Span, b: Span) -> f64 {
    let inter = a.intersection_len(&b);
    let union = a.len() + b.len() - inter;
    if union == 0 {
        return 0.0;
    }
    inter as f64 / union as f64
}

/// Detection-style AP. Each prediction, in rank order, consumes the unused
/// gold span with the highest IoU at or above `iou_threshold` (ties go to
/// the earlier gold span).
pub fn average_precision_iou(pred: &[Span], gold: &[Span], iou_threshold: f64) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::Input("average precision needs at least one gold span".into()));
    }
    let mut gold: Vec<Span> = gold.to_vec();
    gold.sort_unstable();
    let mut used = vec![false; gold.len()];
    let mut tp = 0usize;
    let mut total = 0.0;
    for (r, p) in pred.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gold.iter().enumerate() {
            if used[gi] {
                continue;
            }
            let iou = span_iou(*p, *g);
            if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        if let Some((gi, _)) = best {
            used[gi] = true;
            tp += 1;
            total += tp as f64 / (r + 1) as f64;
        }
    }
    Ok(total / gold.len() as f64)
}

/// Correctly rounded mean of finite values, computed exactly in rationals
/// so that `min ≤ mean` comparisons never flip by an ulp.
pub fn exact_mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sum = BigRational::zero();
    for v in values {
        sum += BigRational::from_float(*v).expect("metric values are finite");
    }
    (sum / BigRational::from_integer(BigInt::from(values.len()))).to_f64()
}

/// Mean over documents (in doc id order) of the lowest score within each
/// document. `None` for no scores.
pub fn robustness(scores: &BTreeMap<String, f64>, doc_of: &HashMap<String, String>) -> Result<Option<f64>> {
    let mut minima: BTreeMap<&str, f64> = BTreeMap::new();
    for (qid, score) in scores {
        let doc = doc_of
            .get(qid)
            .ok_or_else(|| Error::Input(format!("query {qid} has no document")))?;
        minima
            .entry(doc)
            .and_modify(|m| *m = m.min(*score))
            .or_insert(*score);
    }
    Ok(exact_mean(&minima.into_values().collect::<Vec<_>>()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QueryScores {
    pub list_em_f1: f64,
    pub list_em_binary: f64,
    pub list_overlap_f1: f64,
    pub set_em_f1: f64,
    pub set_overlap_f1: f64,
    pub ap_iou50: Option<f64>,
}

pub const METRIC_NAMES: [&str; 6] = [
    "list_em_f1",
    "list_em_binary",
    "list_overlap_f1",
    "set_em_f1",
    "set_overlap_f1",
    "ap_iou50",
];

impl QueryScores {
    pub fn get(&self, metric: &str) -> Option<f64> {
        match metric {
            "list_em_f1" => Some(self.list_em_f1),
            "list_em_binary" => Some(self.list_em_binary),
            "list_overlap_f1" => Some(self.list_overlap_f1),
            "set_em_f1" => Some(self.set_em_f1),
            "set_overlap_f1" => Some(self.set_overlap_f1),
            "ap_iou50" => self.ap_iou50,
            other => panic!("unknown metric {other}"),
        }
    }
}

/// Scores of one query. `pred_spans` is `None` for string-only predictions.
pub fn score_query<P: AsRef<str>, G: AsRef<str>>(
    pred: &[P],
    gold: &[G],
    pred_spans: Option<&[Span]>,
    gold_spans: &[Span],
) -> QueryScores {
    let set = set_scores(pred, gold);
    QueryScores {
        list_em_f1: list_em_f1(pred, gold),
        list_em_binary: list_em_binary(pred, gold),
        list_overlap_f1: list_overlap_f1(pred, gold),
        set_em_f1: set.set_em_f1,
        set_overlap_f1: set.set_overlap_f1,
        ap_iou50: pred_spans.and_then(|p| average_precision_iou(p, gold_spans, DEFAULT_IOU_THRESHOLD).ok()),
    }
}

/// Corpus-level aggregate per metric, ×100; `None` when no query has a value.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct MetricSummary {
    pub list_em_f1: Option<f64>,
    pub list_em_binary: Option<f64>,
    pub list_overlap_f1: Option<f64>,
    pub set_em_f1: Option<f64>,
    pub set_overlap_f1: Option<f64>,
    pub ap_iou50: Option<f64>,
}

impl MetricSummary {
    fn set(&mut self, metric: &str, v: Option<f64>) {
        match metric {
            "list_em_f1" => self.list_em_f1 = v,
            "list_em_binary" => self.list_em_binary = v,
            "list_overlap_f1" => self.list_overlap_f1 = v,
            "set_em_f1" => self.set_em_f1 = v,
            "set_overlap_f1" => self.set_overlap_f1 = v,
            "ap_iou50" => self.ap_iou50 = v,
            other => panic!("unknown metric {other}"),
        }
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        match metric {
            "list_em_f1" => self.list_em_f1,
            "list_em_binary" => self.list_em_binary,
            "list_overlap_f1" => self.list_overlap_f1,
            "set_em_f1" => self.set_em_f1,
            "set_overlap_f1" => self.set_overlap_f1,
            "ap_iou50" => self.ap_iou50,
            other => panic!("unknown metric {other}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub n_queries: usize,
    pub corpus: MetricSummary,
    pub robustness: MetricSummary,
    /// True when some predictions lack spans, so AP was not computed.
    pub map_skipped: bool,
    pub latency_ms_per_q: Option<f64>,
    pub warnings: Vec<String>,
    pub per_query: BTreeMap<String, QueryScores>,
}

/// Scores `predictions` against every query in `dataset`.
///
/// Queries without predictions score as empty lists; predictions for unknown
/// qids are ignored. Both cases add a warning.
pub fn evaluate(dataset: &Dataset, predictions: &[PredictionList]) -> Result<MetricReport> {
    let mut by_qid: HashMap<&str, &PredictionList> = HashMap::new();
    for p in predictions {
        if by_qid.insert(&p.qid, p).is_some() {
            return Err(Error::Input(format!("duplicate qid {} in predictions", p.qid)));
        }
    }
    let map_skipped = predictions.iter().any(|p| p.spans().is_none());

    let mut warnings = Vec::new();
    let mut per_query = BTreeMap::new();
    let mut doc_of = HashMap::new();
    let empty = PredictionList {
        qid: String::new(),
        ranked: Vec::new(),
    };
    for q in dataset.queries() {
        let pred = match by_qid.remove(q.qid.as_str()) {
            Some(p) => p,
            None => {
                warnings.push(format!("no predictions for query {}, scored as empty", q.qid));
                &empty
            }
        };
        let gold_spans = q.gold_spans();
        let pred_spans = if map_skipped { None } else { pred.spans() };
        if !map_skipped && gold_spans.is_empty() {
            warnings.push(format!("query {} has no gold spans, excluded from MAP", q.qid));
        }
        let scores = score_query(&pred.texts(), &q.gold_texts(), pred_spans.as_deref(), &gold_spans);
        per_query.insert(q.qid.clone(), scores);
        doc_of.insert(q.qid.clone(), q.doc_id.clone());
    }
    let mut unknown: Vec<&str> = by_qid.into_keys().collect();
    unknown.sort_unstable();
    for qid in unknown {
        warnings.push(format!("predictions for unknown query {qid} ignored"));
    }

    let mut corpus = MetricSummary::default();
    let mut robust = MetricSummary::default();
    for metric in METRIC_NAMES {
        let scores: BTreeMap<String, f64> = per_query
            .iter()
            .filter_map(|(qid, s): (&String, &QueryScores)| s.get(metric).map(|v| (qid.clone(), v)))
            .collect();
        let values: Vec<f64> = scores.values().copied().collect();
        corpus.set(metric, exact_mean(&values).map(|m| m * 100.0));
        robust.set(metric, robustness(&scores, &doc_of)?.map(|m| m * 100.0));
    }

    Ok(MetricReport {
        n_queries: per_query.len(),
        corpus,
        robustness: robust,
        map_skipped,
        latency_ms_per_q: None,
        warnings,
        per_query,
    })
}

impl MetricReport {
    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Aligned plain-text table: List EM, (R) List EM, List Overlap,
    /// (R) List Overlap, then the set and MAP columns.
    pub fn to_table(&self) -> String {
        let cols: [(&str, Option<f64>); 7] = [
            ("List EM", self.corpus.list_em_f1),
            ("(R) List EM", self.robustness.list_em_f1),
            ("List Overlap", self.corpus.list_overlap_f1),
            ("(R) List Overlap", self.robustness.list_overlap_f1),
            ("Set EM", self.corpus.set_em_f1),
            ("Set Overlap", self.corpus.set_overlap_f1),
            ("MAP@IoU0.5", self.corpus.ap_iou50),
        ];
        let cells: Vec<(String, String)> = cols
            .iter()
            .map(|(h, v)| (h.to_string(), v.map_or_else(|| "-".to_owned(), |v| format!("{v:.3}"))))
            .collect();
        let (mut head, mut row) = (String::new(), String::new());
        for (i, (h, v)) in cells.iter().enumerate() {
            let w = h.len().max(v.len());
            let sep = if i == 0 { "" } else { "  " };
            let _ = write!(head, "{sep}{h:>w$}");
            let _ = write!(row, "{sep}{v:>w$}");
        }
        let mut out = format!("{head}\n{row}\n");
        if let Some(ms) = self.latency_ms_per_q {
            let _ = writeln!(out, "latency: {ms:.3} ms/Q");
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyStats {
    pub ms_per_q_mean: f64,
    pub ms_per_q_p50: f64,
    pub samples: usize,
}

/// Times `run` per query. `warmup` calls are not recorded; `repeats` timed
/// calls cycle through `queries` on the calling thread.
pub fn measure_latency<F>(mut run: F, queries: &[String], warmup: usize, repeats: usize) -> Result<LatencyStats>
where
    F: FnMut(&str) -> Result<()>,
{
    if queries.is_empty() {
        return Err(Error::Input("latency measurement needs at least one query".into()));
    }
    if repeats == 0 {
        return Err(Error::Input("repeats must be at least 1".into()));
    }
    let mut cycle = queries.iter().cycle();
    for _ in 0..warmup {
        run(cycle.next().expect("non-empty"))?;
    }
    let mut cycle = queries.iter().cycle();
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let q = cycle.next().expect("non-empty");
        let started = Instant::now();
        run(q)?;
        samples.push(started.elapsed().as_secs_f64() * 1e3);
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    samples.sort_by(f64::total_cmp);
    let mid = samples.len() / 2;
    let p50 = if samples.len() % 2 == 1 {
        samples[mid]
    } else {
        (samples[mid - 1] + samples[mid]) / 2.0
    };
    Ok(LatencyStats {
        ms_per_q_mean: mean,
        ms_per_q_p50: p50,
        samples: samples.len(),
    })
}
