//! The end-to-end engine shared by the CLI, the service and evaluation:
//! link, fetch knowledge, encode, fuse, search, threshold.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{
    embedding::{encode_query, EmbeddingProvider},
    error::Result,
    index::{apply_threshold, FusionMode, IndexComponents, PhraseIndex, SearchHit, ThresholdPolicy, DEFAULT_TOP_K},
    knowledge::{KnowledgeSource, KnowledgeStore},
    linking::EntityLinker,
    model::{Dataset, Document, Mention, Prediction, PredictionList},
};

/// One reported match, as printed by the CLI and returned by the service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub rank: usize,
    pub start: usize,
    pub end: usize,
    pub text: String,
    pub entity_id: String,
    pub score: f64,
}

impl From<&SearchHit> for Match {
    fn from(h: &SearchHit) -> Self {
        Self {
            rank: h.rank,
            start: h.mention.span.start,
            end: h.mention.span.end,
            text: h.mention.surface.clone(),
            entity_id: h.mention.entity_id.clone(),
            score: h.score,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    pub top_k: usize,
    pub policy: ThresholdPolicy,
    pub score_floor: Option<f64>,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            top_k: DEFAULT_TOP_K,
            policy: ThresholdPolicy::MentionTopK,
            score_floor: None,
        }
    }
}

#[derive(Clone)]
pub struct Engine {
    /// `None` means gold mentions must be supplied by the caller.
    pub linker: Option<Arc<dyn EntityLinker>>,
    pub knowledge: Arc<dyn KnowledgeSource>,
    pub provider: Arc<dyn EmbeddingProvider>,
    pub mode: FusionMode,
    pub normalize: bool,
    pub search: SearchOptions,
}

impl Engine {
    pub fn new(
        linker: Option<Arc<dyn EntityLinker>>,
        knowledge: Arc<dyn KnowledgeSource>,
        provider: Arc<dyn EmbeddingProvider>,
    ) -> Self {
        Self {
            linker,
            knowledge,
            provider,
            mode: FusionMode::Both,
            normalize: false,
            search: SearchOptions::default(),
        }
    }

    pub fn with_mode(mut self, mode: FusionMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_search(mut self, search: SearchOptions) -> Self {
        self.search = search;
        self
    }

    pub fn link(&self, document: &Document) -> Result<Vec<Mention>> {
        match &self.linker {
            Some(l) => l.link(document),
            None => Ok(Vec::new()),
        }
    }

    /// Links the document and encodes every mention; fuse the result for
    /// any mode without re-encoding.
    pub fn components(&self, document: &Document) -> Result<IndexComponents> {
        let mentions = self.link(document)?;
        self.components_for(document, mentions)
    }

    pub fn components_for(&self, document: &Document, mentions: Vec<Mention>) -> Result<IndexComponents> {
        IndexComponents::compute(document, mentions, self.knowledge.as_ref(), self.provider.as_ref())
    }

    pub fn index(&self, document: &Document) -> Result<PhraseIndex> {
        Ok(self.components(document)?.fuse(self.mode, self.normalize))
    }

    pub fn index_with_mentions(&self, document: &Document, mentions: Vec<Mention>) -> Result<PhraseIndex> {
        Ok(self.components_for(document, mentions)?.fuse(self.mode, self.normalize))
    }

    pub fn query(&self, index: &PhraseIndex, query: &str) -> Result<Vec<SearchHit>> {
        self.query_with(index, query, self.search)
    }

    pub fn query_with(&self, index: &PhraseIndex, query: &str, options: SearchOptions) -> Result<Vec<SearchHit>> {
        let q = encode_query(self.provider.as_ref(), query)?;
        search_with(index, &q, options)
    }

    /// Predictions for every query in the dataset, in dataset order.
    /// Without a linker, each document's gold mentions are indexed.
    pub fn predict_dataset(&self, dataset: &Dataset) -> Result<Vec<PredictionList>> {
        let per_doc: Vec<Vec<PredictionList>> = dataset
            .records
            .par_iter()
            .map(|rec| {
                let index = match self.linker {
                    Some(_) => self.index(&rec.document)?,
                    None => self.index_with_mentions(&rec.document, rec.mentions.clone())?,
                };
                rec.queries
                    .iter()
                    .map(|q| {
                        let hits = self.query(&index, &q.query)?;
                        Ok(PredictionList {
                            qid: q.qid.clone(),
                            ranked: hits
                                .iter()
                                .map(|h| Prediction {
                                    text: h.mention.surface.clone(),
                                    span: Some(h.mention.span),
                                    score: Some(h.score),
                                })
                                .collect(),
                        })
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        Ok(per_doc.into_iter().flatten().collect())
    }
}

/// Exhaustive search followed by thresholding.
pub fn search_with(
    index: &PhraseIndex,
    query: &crate::model::EmbeddingVector,
    options: SearchOptions,
) -> Result<Vec<SearchHit>> {
    let depth = match options.policy {
        ThresholdPolicy::MentionTopK => options.top_k,
        ThresholdPolicy::EntityTopK => index.len().max(1),
    };
    let hits = index.search(query, depth, options.score_floor)?;
    Ok(apply_threshold(hits, options.policy, options.top_k))
}

/// Knowledge embedded in the dataset file itself, for gold-mention runs.
pub fn dataset_knowledge(dataset: &Dataset) -> KnowledgeStore {
    KnowledgeStore::memory(dataset.records.iter().flat_map(|r| r.knowledge.iter().cloned()))
}
