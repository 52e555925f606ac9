//! Indexing cost versus per-query latency on a larger synthetic document.

use std::sync::Arc;

use ktrlf::{
    embedding::ReferenceHashEmbedder, knowledge::KnowledgeStore, linking::Gazetteer, metrics::measure_latency,
    model::{Document, KnowledgeRecord}, pipeline::Engine,
};

fn main() -> ktrlf::Result<()> {
    let names: Vec<String> = (0..40).map(|i| format!("Company{i} Holdings")).collect();
    let gazetteer = Gazetteer::from_pairs(names.iter().enumerate().map(|(i, n)| (n.to_lowercase(), format!("C{i}"))))?;
    let knowledge = KnowledgeStore::memory(names.iter().enumerate().map(|(i, n)| KnowledgeRecord {
        entity_id: format!("C{i}"),
        title: n.clone(),
        description: format!("{n} is a firm founded in {}. It makes widgets.", 1900 + i),
    }));
    let text: Vec<String> = (0..50).map(|s| format!("{} partnered with {}.", names[s % 40], names[(s * 3 + 1) % 40])).collect();
    let doc = Document::new("bench", text.join(" "))?;

    let engine = Engine::new(Some(Arc::new(gazetteer)), Arc::new(knowledge), Arc::new(ReferenceHashEmbedder::new(384)));
    let index = engine.index(&doc)?;
    let queries: Vec<String> = ["widget makers", "old firms", "Company7 partners"].map(String::from).to_vec();
    let stats = measure_latency(|q| engine.query(&index, q).map(drop), &queries, 10, 200)?;
    println!("{} candidates, {} dims", index.len(), index.dims());
    println!("indexing {:.2} ms", index.build_ms());
    println!("query    {:.4} ms mean, {:.4} ms p50 over {} runs", stats.ms_per_q_mean, stats.ms_per_q_p50, stats.samples);
    Ok(())
}
