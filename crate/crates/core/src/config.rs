//! Flat configuration shared by the service and the CLI: a TOML file whose
//! keys mirror the field names, each overridable by `KTRLF_<KEY>`.

use std::{
    path::{Path, PathBuf},
    sync::Arc,
};

use serde::{Deserialize, Serialize};

use crate::{
    cache::DiskCache,
    embedding::{EmbeddingProvider, ReferenceHashEmbedder, RemoteEmbedder, DEFAULT_DIM},
    error::{Error, Result},
    index::{FusionMode, ThresholdPolicy, DEFAULT_TOP_K},
    knowledge::{KnowledgeStore, DEFAULT_SENTENCE_LIMIT},
    linking::{EntityLinker, Gazetteer, RemoteLinker},
    pipeline::{Engine, SearchOptions},
};

pub const ENV_PREFIX: &str = "KTRLF";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    /// The deterministic hashing embedder.
    #[default]
    Ref,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub listen_address: String,
    pub provider: ProviderKind,
    /// Per-token dimension; indexed vectors have twice this many values.
    pub d: usize,
    pub provider_url: Option<String>,
    pub gazetteer: Option<PathBuf>,
    pub linker_url: Option<String>,
    pub min_confidence: f32,
    pub knowledge_dir: Option<PathBuf>,
    pub knowledge_url: Option<String>,
    pub sentence_limit: usize,
    pub default_top_k: usize,
    pub default_mode: FusionMode,
    pub default_policy: ThresholdPolicy,
    /// Scale fused vectors to unit length before indexing.
    pub normalize: bool,
    pub cache_dir: PathBuf,
    /// In-memory document indexes kept before LRU eviction.
    pub index_capacity: usize,
    pub max_text_chars: usize,
    /// `*` or a comma-separated list of origins.
    pub cors_origin: String,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen_address: "127.0.0.1:8080".into(),
            provider: ProviderKind::Ref,
            d: DEFAULT_DIM,
            provider_url: None,
            gazetteer: None,
            linker_url: None,
            min_confidence: 0.0,
            knowledge_dir: None,
            knowledge_url: None,
            sentence_limit: DEFAULT_SENTENCE_LIMIT,
            default_top_k: DEFAULT_TOP_K,
            default_mode: FusionMode::Both,
            default_policy: ThresholdPolicy::MentionTopK,
            normalize: false,
            cache_dir: PathBuf::from(".ktrlf-cache"),
            index_capacity: 64,
            max_text_chars: 1_000_000,
            cors_origin: "*".into(),
        }
    }
}

impl ServiceConfig {
    /// Defaults, then the optional file, then `KTRLF_*` variables.
    pub fn load(file: Option<&Path>) -> Result<Self> {
        let mut builder = config::Config::builder()
            .add_source(config::Config::try_from(&Self::default()).map_err(config_err)?);
        if let Some(path) = file {
            if !path.is_file() {
                return Err(Error::Config(format!("config file {} not found", path.display())));
            }
            builder = builder.add_source(config::File::from(path).format(config::FileFormat::Toml));
        }
        builder = builder.add_source(
            config::Environment::with_prefix(ENV_PREFIX)
                .prefix_separator("_")
                .try_parsing(true),
        );
        let cfg: Self = builder
            .build()
            .and_then(|c| c.try_deserialize())
            .map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Config("d must be at least 1".into()));
        }
        if self.default_top_k == 0 {
            return Err(Error::Config("default_top_k must be at least 1".into()));
        }
        if self.sentence_limit == 0 {
            return Err(Error::Config("sentence_limit must be at least 1".into()));
        }
        if self.index_capacity == 0 {
            return Err(Error::Config("index_capacity must be at least 1".into()));
        }
        if self.gazetteer.is_some() && self.linker_url.is_some() {
            return Err(Error::Config("set either gazetteer or linker_url, not both".into()));
        }
        if self.knowledge_dir.is_some() && self.knowledge_url.is_some() {
            return Err(Error::Config("set either knowledge_dir or knowledge_url, not both".into()));
        }
        if self.provider == ProviderKind::Remote && self.provider_url.is_none() {
            return Err(Error::Config("provider = remote needs provider_url".into()));
        }
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(Error::Config("min_confidence must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn cache(&self, sub: &str) -> Result<DiskCache> {
        DiskCache::open(self.cache_dir.join(sub))
    }

    pub fn build_provider(&self) -> Result<Arc<dyn EmbeddingProvider>> {
        Ok(match self.provider {
            ProviderKind::Ref => Arc::new(ReferenceHashEmbedder::new(self.d)),
            ProviderKind::Remote => {
                let url = self.provider_url.clone().expect("validated");
                Arc::new(RemoteEmbedder::new(url, self.d, self.cache("embeddings")?))
            }
        })
    }

    /// `None` when neither a gazetteer nor a linker endpoint is configured.
    pub fn build_linker(&self) -> Result<Option<Arc<dyn EntityLinker>>> {
        if let Some(path) = &self.gazetteer {
            return Ok(Some(Arc::new(Gazetteer::load(path)?)));
        }
        if let Some(url) = &self.linker_url {
            let linker = RemoteLinker::new(url.clone(), self.cache("links")?).with_min_confidence(self.min_confidence);
            return Ok(Some(Arc::new(linker)));
        }
        Ok(None)
    }

    /// An empty in-memory store when no knowledge backing is configured.
    pub fn build_knowledge(&self) -> Result<KnowledgeStore> {
        let store = if let Some(dir) = &self.knowledge_dir {
            KnowledgeStore::fixture_dir(dir)?
        } else if let Some(url) = &self.knowledge_url {
            KnowledgeStore::remote(url.clone(), self.cache("knowledge")?)
        } else {
            KnowledgeStore::memory([])
        };
        store.with_sentence_limit(self.sentence_limit)
    }

    pub fn search_options(&self) -> SearchOptions {
        SearchOptions {
            top_k: self.default_top_k,
            policy: self.default_policy,
            score_floor: None,
        }
    }

    pub fn build_engine(&self) -> Result<Engine> {
        let mut engine = Engine::new(
            self.build_linker()?,
            Arc::new(self.build_knowledge()?),
            self.build_provider()?,
        )
        .with_mode(self.default_mode)
        .with_search(self.search_options());
        engine.normalize = self.normalize;
        Ok(engine)
    }
}

fn config_err(e: config::ConfigError) -> Error {
    Error::Config(e.to_string())
}
