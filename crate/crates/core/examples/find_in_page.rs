//! Index one document and run a few semantic find-in-page queries.
//!
//! `cargo run --example find_in_page -- "Chinese technology companies"`

use std::{path::PathBuf, sync::Arc};

use ktrlf::{
    embedding::ReferenceHashEmbedder, knowledge::KnowledgeStore, linking::Gazetteer, model::Document,
    pipeline::{Engine, Match},
};

fn main() -> ktrlf::Result<()> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/golden");
    let engine = Engine::new(
        Some(Arc::new(Gazetteer::load(fixtures.join("gazetteer.jsonl"))?)),
        Arc::new(KnowledgeStore::fixture_dir(fixtures.join("knowledge"))?),
        Arc::new(ReferenceHashEmbedder::new(64)),
    );

    let doc = Document::new(
        "page",
        "WeChat is a messaging app developed by Tencent. Baidu runs its own forums, \
         while Facebook dominates outside Asia. Alan Shearer once played for Newcastle.",
    )?;
    let index = engine.index(&doc)?;
    println!("indexed {} mentions of {} entities in {:.2} ms", index.len(), index.entity_count(), index.build_ms());

    let queries: Vec<String> = match std::env::args().skip(1).collect::<Vec<_>>() {
        q if q.is_empty() => vec!["Chinese technology companies".into(), "Famous striker".into()],
        q => q,
    };
    for q in &queries {
        println!("\n{q}");
        for hit in engine.query(&index, q)? {
            let m = Match::from(&hit);
            println!("  #{} [{}, {}) {:<14} {:<22} {:.4}", m.rank, m.start, m.end, m.text, m.entity_id, m.score);
        }
    }
    Ok(())
}
