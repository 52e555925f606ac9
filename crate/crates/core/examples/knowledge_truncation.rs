//! Knowledge descriptions are cut to their first sentences before encoding.

use std::path::PathBuf;

use ktrlf::knowledge::{truncate_sentences, KnowledgeSource, KnowledgeStore};

fn main() -> ktrlf::Result<()> {
    let text = "Dr. Who is a show. It started in 1963. Mr. Smith left. He ran!";
    for k in 1..=4 {
        println!("k={k}: {:?}", truncate_sentences(text, k));
    }

    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/golden/knowledge");
    let store = KnowledgeStore::fixture_dir(dir)?.with_sentence_limit(2)?;
    let record = store.get_knowledge("Tencent")?;
    println!("\n{} ({})\n{}", record.title, record.entity_id, record.description);
    println!("\nunknown entity: {:?}", store.get_knowledge("Nowhere")?);
    Ok(())
}
