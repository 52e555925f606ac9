//! The deterministic reference embedder: token vectors, phrase vectors from
//! boundary tokens, query and knowledge vectors.

use ktrlf::{
    embedding::{encode_knowledge, encode_phrase, encode_query, reference_token_vector, EmbeddingProvider, ReferenceHashEmbedder},
    index::inner_product,
    model::{Document, KnowledgeRecord},
};

fn main() -> ktrlf::Result<()> {
    let provider = ReferenceHashEmbedder::new(8);
    println!("token 'abc', d=8, seed 0: {:?}", reference_token_vector("abc", 8, 0));

    let doc = Document::new("d", "Newcastle United F.C. signed Alan Shearer.")?;
    let tokens = provider.embed_tokens(doc.text())?;
    println!("\n{} tokens: {:?}", tokens.len(), tokens.tokenized.tokens);

    let span = ktrlf::model::Span::new(29, 41)?;
    let phrase = encode_phrase(&provider, &doc, span)?;
    let record = KnowledgeRecord {
        entity_id: "Alan_Shearer".into(),
        title: "Alan Shearer".into(),
        description: "Alan Shearer is an English former footballer.".into(),
    };
    let knowledge = encode_knowledge(&provider, &record)?;
    let query = encode_query(&provider, "famous striker")?;
    println!("\nphrase    {:?}", phrase.as_slice());
    println!("knowledge {:?}", knowledge.as_slice());
    println!("\nq·phrase = {:.5}, q·knowledge = {:.5}", inner_product(query.as_slice(), phrase.as_slice()), inner_product(query.as_slice(), knowledge.as_slice()));
    Ok(())
}
