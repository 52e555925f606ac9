//! External knowledge per entity: local fixture directory, remote endpoint
//! with cache, or an in-memory map. Unknown entities yield an empty
//! description instead of an error.

use std::{
    collections::HashMap,
    fs,
    io::ErrorKind,
    path::{Path, PathBuf},
};

use serde::{Deserialize, Serialize};

use crate::{
    cache::{sha256_hex, DiskCache},
    error::{Error, Result},
    http::{join, status_error, HttpClient},
    model::KnowledgeRecord,
};

pub const DEFAULT_SENTENCE_LIMIT: usize = 10;

pub trait KnowledgeSource: Send + Sync {
    fn get_knowledge(&self, entity_id: &str) -> Result<KnowledgeRecord>;
}

/// Prefix of `text` holding at most `k` sentences, trailing whitespace trimmed.
///
/// A sentence ends at `.`, `!` or `?` followed by whitespace and then an
/// uppercase letter, a digit, or the end of the text.
pub fn truncate_sentences(text: &str, k: usize) -> String {
    assert!(k >= 1, "sentence limit must be at least 1");
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut count = 0;
    for (i, &(byte, c)) in chars.iter().enumerate() {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        let mut j = i + 1;
        if j < chars.len() && !chars[j].1.is_whitespace() {
            continue;
        }
        while j < chars.len() && chars[j].1.is_whitespace() {
            j += 1;
        }
        let boundary = match chars.get(j) {
            None => true,
            Some(&(_, next)) => next.is_uppercase() || next.is_numeric(),
        };
        if boundary {
            count += 1;
            if count == k {
                return text[..byte + c.len_utf8()].to_owned();
            }
        }
    }
    text.trim_end().to_owned()
}

enum Backing {
    Fixture {
        dir: PathBuf,
        titles: HashMap<String, String>,
    },
    Remote {
        client: HttpClient,
        endpoint: String,
        cache: DiskCache,
    },
    Memory(HashMap<String, KnowledgeRecord>),
}

pub struct KnowledgeStore {
    backing: Backing,
    sentence_limit: usize,
}

#[derive(Serialize, Deserialize)]
struct RemoteKnowledge {
    entity_id: String,
    title: String,
    text: String,
}

impl KnowledgeStore {
    /// `{entity_id}.txt` articles plus an optional `index.json` of titles.
    pub fn fixture_dir(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        if !dir.is_dir() {
            return Err(Error::Config(format!("knowledge directory {} does not exist", dir.display())));
        }
        let index = dir.join("index.json");
        let titles = match fs::read(&index) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map_err(|e| Error::Config(format!("{}: {e}", index.display())))?,
            Err(e) if e.kind() == ErrorKind::NotFound => HashMap::new(),
            Err(e) => return Err(Error::io(index, e)),
        };
        Ok(Self {
            backing: Backing::Fixture { dir, titles },
            sentence_limit: DEFAULT_SENTENCE_LIMIT,
        })
    }

    /// `GET {endpoint}/knowledge?entity_id=…`, cached per entity id.
    pub fn remote(endpoint: impl Into<String>, cache: DiskCache) -> Self {
        Self {
            backing: Backing::Remote {
                client: HttpClient::default(),
                endpoint: endpoint.into(),
                cache,
            },
            sentence_limit: DEFAULT_SENTENCE_LIMIT,
        }
    }

    pub fn memory(records: impl IntoIterator<Item = KnowledgeRecord>) -> Self {
        Self {
            backing: Backing::Memory(records.into_iter().map(|r| (r.entity_id.clone(), r)).collect()),
            sentence_limit: DEFAULT_SENTENCE_LIMIT,
        }
    }

    pub fn with_sentence_limit(mut self, limit: usize) -> Result<Self> {
        if limit == 0 {
            return Err(Error::Config("sentence_limit must be at least 1".into()));
        }
        self.sentence_limit = limit;
        Ok(self)
    }

    pub fn sentence_limit(&self) -> usize {
        self.sentence_limit
    }

    /// The HTTP client of a remote store.
    pub fn client(&self) -> Option<&HttpClient> {
        match &self.backing {
            Backing::Remote { client, .. } => Some(client),
            _ => None,
        }
    }

    fn raw(&self, entity_id: &str) -> Result<KnowledgeRecord> {
        match &self.backing {
            Backing::Fixture { dir, titles } => {
                let title = titles.get(entity_id).cloned().unwrap_or_else(|| entity_id.to_owned());
                let description = if is_safe_file_stem(entity_id) {
                    read_optional(&dir.join(format!("{entity_id}.txt")))?.unwrap_or_default()
                } else {
                    String::new()
                };
                Ok(KnowledgeRecord {
                    entity_id: entity_id.to_owned(),
                    title,
                    description,
                })
            }
            Backing::Memory(map) => Ok(map
                .get(entity_id)
                .cloned()
                .unwrap_or_else(|| KnowledgeRecord::missing(entity_id))),
            Backing::Remote {
                client,
                endpoint,
                cache,
            } => {
                let key = sha256_hex(entity_id.as_bytes());
                let body = match cache.get(&key)? {
                    Some(body) => body,
                    None => {
                        let url = join(endpoint, "knowledge");
                        let resp = client.get(&url, &[("entity_id", entity_id)])?;
                        let body = if resp.status == 404 {
                            serde_json::to_vec(&RemoteKnowledge {
                                entity_id: entity_id.to_owned(),
                                title: entity_id.to_owned(),
                                text: String::new(),
                            })
                            .expect("serializable")
                        } else if resp.is_success() {
                            resp.body
                        } else {
                            return Err(status_error("knowledge store", &resp));
                        };
                        parse_remote(entity_id, &body)?;
                        cache.put(&key, &body)?;
                        body
                    }
                };
                parse_remote(entity_id, &body)
            }
        }
    }
}

impl KnowledgeSource for KnowledgeStore {
    fn get_knowledge(&self, entity_id: &str) -> Result<KnowledgeRecord> {
        let mut record = self.raw(entity_id)?;
        record.description = truncate_sentences(&record.description, self.sentence_limit);
        if record.title.trim().is_empty() {
            record.title = entity_id.to_owned();
        }
        Ok(record)
    }
}

fn parse_remote(entity_id: &str, body: &[u8]) -> Result<KnowledgeRecord> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    let r: RemoteKnowledge = serde_path_to_error::deserialize(de)
        .map_err(|e| Error::Protocol(format!("knowledge response `{}`: {}", e.path(), e.inner())))?;
    if r.entity_id != entity_id {
        return Err(Error::Protocol(format!(
            "knowledge response `entity_id` is {:?}, asked for {entity_id:?}",
            r.entity_id
        )));
    }
    Ok(KnowledgeRecord {
        entity_id: r.entity_id,
        title: r.title,
        description: r.text,
    })
}

fn is_safe_file_stem(id: &str) -> bool {
    !id.is_empty() && id != "." && id != ".." && !id.contains(['/', '\\', '\0'])
}

fn read_optional(path: &Path) -> Result<Option<String>> {
    match fs::read_to_string(path) {
        Ok(s) => Ok(Some(s)),
        Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(path, e)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitter_examples() {
        assert_eq!(truncate_sentences("A. B! C? D.", 2), "A. B!");
        assert_eq!(truncate_sentences("", 10), "");
        assert_eq!(truncate_sentences("One sentence", 3), "One sentence");
        assert_eq!(truncate_sentences("Trailing space.   ", 3), "Trailing space.");
        // A lowercase continuation does not end a sentence.
        assert_eq!(truncate_sentences("Mr. smith left. He ran.", 1), "Mr. smith left.");
        // The rule has no abbreviation list: "Mr." before a capital is a boundary.
        assert_eq!(truncate_sentences("Mr. Smith left. He ran.", 1), "Mr.");
        assert_eq!(truncate_sentences("It cost 5. 3 left.", 1), "It cost 5.");
        assert_eq!(truncate_sentences("v1.2 is out. Yes", 1), "v1.2 is out.");
    }

    #[test]
    fn twelve_sentences_cut_to_ten() {
        let text: String = (1..=12).map(|i| format!("Sentence number {i} ends here. ")).collect();
        let cut = truncate_sentences(&text, 10);
        assert!(cut.ends_with("number 10 ends here."));
        assert_eq!(cut.matches("ends here.").count(), 10);
    }

    #[test]
    fn fixture_store_truncates_and_falls_back() {
        let dir = tempfile::tempdir().unwrap();
        let body: String = (1..=12).map(|i| format!("Fact {i}. ")).collect();
        fs::write(dir.path().join("E1.txt"), body).unwrap();
        fs::write(dir.path().join("index.json"), r#"{"E1": "Entity One"}"#).unwrap();
        let store = KnowledgeStore::fixture_dir(dir.path()).unwrap();

        let r = store.get_knowledge("E1").unwrap();
        assert_eq!(r.title, "Entity One");
        assert!(r.description.ends_with("Fact 10."), "{}", r.description);

        let missing = store.get_knowledge("E404").unwrap();
        assert_eq!(missing.description, "");
        assert_eq!(missing.title, "E404");

        // path traversal is treated as unknown
        assert_eq!(store.get_knowledge("../E1").unwrap().description, "");
    }

    #[test]
    fn memory_store_applies_limit() {
        let store = KnowledgeStore::memory([KnowledgeRecord {
            entity_id: "X".into(),
            title: "X".into(),
            description: "A. B. C.".into(),
        }])
        .with_sentence_limit(2)
        .unwrap();
        assert_eq!(store.get_knowledge("X").unwrap().description, "A. B.");
        assert!(KnowledgeStore::memory([]).with_sentence_limit(0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn truncation_is_prefix_and_idempotent(text in "[A-Za-z0-9 .!?\n]{0,80}", k in 1usize..5) {
            let once = truncate_sentences(&text, k);
            proptest::prop_assert!(text.starts_with(&once));
            proptest::prop_assert_eq!(truncate_sentences(&once, k), once.clone());
        }
    }
}
