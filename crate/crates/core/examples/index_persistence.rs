//! Save an index, load it back and search it without any encoder state.

use std::{path::PathBuf, sync::Arc};

use ktrlf::{
    embedding::{encode_query, ReferenceHashEmbedder},
    index::PhraseIndex,
    knowledge::KnowledgeStore,
    linking::Gazetteer,
    model::Document,
    pipeline::Engine,
};

fn main() -> ktrlf::Result<()> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/golden");
    let provider = Arc::new(ReferenceHashEmbedder::new(32));
    let engine = Engine::new(
        Some(Arc::new(Gazetteer::load(fixtures.join("gazetteer.jsonl"))?)),
        Arc::new(KnowledgeStore::fixture_dir(fixtures.join("knowledge"))?),
        provider.clone(),
    );
    let doc = Document::new("news", "Marie Curie moved from Warsaw to Paris and later won a Nobel Prize in Chemistry.")?;
    let index = engine.index(&doc)?;

    let path = std::env::temp_dir().join("ktrlf-example.ktrlf");
    index.save(&path)?;
    let loaded = PhraseIndex::load(&path)?;
    println!("{} bytes, {} mentions, mode {}, dims {}", std::fs::metadata(&path).map_or(0, |m| m.len()), loaded.len(), loaded.mode(), loaded.dims());
    assert_eq!(loaded.to_bytes(), index.to_bytes());

    for hit in loaded.search(&encode_query(provider.as_ref(), "European capital cities")?, 3, None)? {
        println!("  #{} {} {:.4}", hit.rank, hit.mention.surface, hit.score);
    }
    std::fs::remove_file(&path).ok();
    Ok(())
}
