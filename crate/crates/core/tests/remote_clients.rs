mod common;

use std::sync::{atomic::Ordering, Arc};

use common::{gazetteer, knowledge, MockUpstream};
use ktrlf::{
    cache::DiskCache,
    embedding::{EmbeddingProvider, ReferenceHashEmbedder, RemoteEmbedder},
    knowledge::{KnowledgeSource, KnowledgeStore},
    linking::{EntityLinker, RemoteLinker},
    model::{load_dataset, Document},
    pipeline::Engine,
    Error,
};

fn cache(dir: &tempfile::TempDir, sub: &str) -> DiskCache {
    DiskCache::open(dir.path().join(sub)).unwrap()
}

fn doc() -> Document {
    Document::new("d", "Alan Shearer visited Tencent to discuss WeChat.").unwrap()
}

#[test]
fn remote_linker_matches_gazetteer_and_caches() {
    let up = MockUpstream::start(8);
    let dir = tempfile::tempdir().unwrap();
    let linker = RemoteLinker::new(&up.url, cache(&dir, "links"));
    let remote = linker.link(&doc()).unwrap();
    let local = gazetteer().link(&doc()).unwrap();
    assert_eq!(remote.len(), 3);
    for (r, l) in remote.iter().zip(&local) {
        assert_eq!((r.span, &r.surface, &r.entity_id), (l.span, &l.surface, &l.entity_id));
        assert_eq!(r.link_confidence, 0.9);
    }

    // Warm cache answers with the network disabled, byte-identically.
    linker.client().set_offline(true);
    assert_eq!(linker.link(&doc()).unwrap(), remote);
    assert_eq!(up.hits.link.load(Ordering::SeqCst), 1);

    // A fresh client over the same cache directory also stays offline.
    let again = RemoteLinker::new(&up.url, cache(&dir, "links"));
    again.client().set_offline(true);
    assert_eq!(again.link(&doc()).unwrap(), remote);
    assert_eq!(again.client().requests_issued(), 0);
}

#[test]
fn remote_linker_min_confidence_filters() {
    let up = MockUpstream::start(8);
    let dir = tempfile::tempdir().unwrap();
    let linker = RemoteLinker::new(&up.url, cache(&dir, "links")).with_min_confidence(0.95);
    assert!(linker.link(&doc()).unwrap().is_empty());
}

#[test]
fn remote_linker_rejects_out_of_bounds_span() {
    let up = MockUpstream::start(8);
    up.hits.bad_span.store(true, Ordering::SeqCst);
    let dir = tempfile::tempdir().unwrap();
    let linker = RemoteLinker::new(&up.url, cache(&dir, "links"));
    match linker.link(&doc()) {
        Err(Error::Protocol(m)) => assert!(m.contains("mentions[3]"), "{m}"),
        other => panic!("expected protocol error, got {other:?}"),
    }
    // Nothing invalid was cached.
    assert_eq!(std::fs::read_dir(dir.path().join("links")).unwrap().count(), 0);
}

#[test]
fn transport_errors_without_cache() {
    let up = MockUpstream::start(8);
    up.hits.fail.store(true, Ordering::SeqCst);
    let dir = tempfile::tempdir().unwrap();
    let linker = RemoteLinker::new(&up.url, cache(&dir, "links"));
    assert!(matches!(linker.link(&doc()), Err(Error::Transport(_))));

    let dead = RemoteLinker::new("http://127.0.0.1:9", cache(&dir, "dead"));
    assert!(matches!(dead.link(&doc()), Err(Error::Transport(_))));

    let offline = RemoteLinker::new(&up.url, cache(&dir, "offline"));
    offline.client().set_offline(true);
    assert!(matches!(offline.link(&doc()), Err(Error::Transport(_))));
}

#[test]
fn remote_knowledge_truncates_and_handles_unknown() {
    let up = MockUpstream::start(8);
    let dir = tempfile::tempdir().unwrap();
    let store = KnowledgeStore::remote(&up.url, cache(&dir, "knowledge"));
    let wechat = store.get_knowledge("WeChat").unwrap();
    assert_eq!(wechat, knowledge().get_knowledge("WeChat").unwrap());

    let unknown = store.get_knowledge("E404").unwrap();
    assert_eq!(unknown.description, "");
    assert_eq!(unknown.title, "E404");

    store.client().unwrap().set_offline(true);
    assert_eq!(store.get_knowledge("WeChat").unwrap(), wechat);
    assert_eq!(store.get_knowledge("E404").unwrap(), unknown);
    assert_eq!(up.hits.knowledge.load(Ordering::SeqCst), 2);
}

#[test]
fn remote_knowledge_upstream_failure() {
    let up = MockUpstream::start(8);
    up.hits.fail.store(true, Ordering::SeqCst);
    let dir = tempfile::tempdir().unwrap();
    let store = KnowledgeStore::remote(&up.url, cache(&dir, "knowledge"));
    assert!(matches!(store.get_knowledge("WeChat"), Err(Error::Transport(_))));
}

#[test]
fn remote_embedder_reproduces_reference_bit_for_bit() {
    let up = MockUpstream::start(16);
    let dir = tempfile::tempdir().unwrap();
    let remote = RemoteEmbedder::new(&up.url, 16, cache(&dir, "emb"));
    let local = ReferenceHashEmbedder::new(16);
    let text = "Tencent's WeChat, launched in 2011.";
    let (r, l) = (remote.embed_tokens(text).unwrap(), local.embed_tokens(text).unwrap());
    assert_eq!(r.tokenized, l.tokenized);
    for i in 0..l.len() {
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(r.vector(i)), bits(l.vector(i)));
    }
    assert_eq!(remote.embed_query_pair("social network").unwrap(), local.embed_query_pair("social network").unwrap());

    remote.client().set_offline(true);
    assert_eq!(remote.embed_tokens(text).unwrap().tokenized, l.tokenized);
    assert!(remote.embed_query_pair("uncached query").is_err());
}

#[test]
fn remote_embedder_dimension_mismatch_is_protocol_error() {
    let up = MockUpstream::start(16);
    let dir = tempfile::tempdir().unwrap();
    let remote = RemoteEmbedder::new(&up.url, 8, cache(&dir, "emb"));
    assert!(matches!(remote.embed_tokens("WeChat"), Err(Error::Protocol(_))));
}

/// With every remote dependency warm, indexing and querying a whole dataset
/// again issues no requests, and the results equal the local pipeline's.
#[test]
fn warm_remote_pipeline_is_offline_and_matches_local() {
    let up = MockUpstream::start(64);
    let dir = tempfile::tempdir().unwrap();
    let dataset = load_dataset(common::fixtures().join("dataset.jsonl")).unwrap();

    let linker = Arc::new(RemoteLinker::new(&up.url, cache(&dir, "links")));
    let store = Arc::new(KnowledgeStore::remote(&up.url, cache(&dir, "knowledge")));
    let provider = Arc::new(RemoteEmbedder::new(&up.url, 64, cache(&dir, "emb")));
    let remote = Engine::new(Some(linker.clone()), store.clone(), provider.clone());
    let cold = remote.predict_dataset(&dataset).unwrap();
    assert!(up.hits.total() > 0);

    let local = Engine::new(Some(Arc::new(gazetteer())), Arc::new(knowledge()), Arc::new(ReferenceHashEmbedder::new(64)));
    let expected = local.predict_dataset(&dataset).unwrap();
    assert_eq!(cold, expected);

    let before = up.hits.total();
    linker.client().set_offline(true);
    store.client().unwrap().set_offline(true);
    provider.client().set_offline(true);
    assert_eq!(remote.predict_dataset(&dataset).unwrap(), expected);
    assert_eq!(up.hits.total(), before);
}
