//! Run the HTTP search service over the bundled fixtures.
//!
//! `cargo run --example serve`, then:
//! `curl -s localhost:8080/v1/documents -d '{"text": "WeChat is owned by Tencent."}' -H 'content-type: application/json'`

use std::path::PathBuf;

use ktrlf::config::ServiceConfig;

#[tokio::main]
async fn main() -> ktrlf::Result<()> {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/golden");
    let mut config = ServiceConfig::load(None)?;
    if config.linker_url.is_none() {
        config.gazetteer.get_or_insert(fixtures.join("gazetteer.jsonl"));
    }
    if config.knowledge_url.is_none() {
        config.knowledge_dir.get_or_insert(fixtures.join("knowledge"));
    }
    ktrlf::service::serve(config).await
}
