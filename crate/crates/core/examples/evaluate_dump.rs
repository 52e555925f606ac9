//! Score a predictions dump from any system against a dataset.
//!
//! `cargo run --example evaluate_dump -- dataset.jsonl predictions.jsonl`
//! Defaults to the bundled golden fixture and its expected dump.

use std::path::PathBuf;

use ktrlf::{
    metrics::evaluate,
    model::{load_dataset, load_predictions},
};

fn main() -> ktrlf::Result<()> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/golden");
    let mut args = std::env::args_os().skip(1).map(PathBuf::from);
    let dataset = args.next().unwrap_or_else(|| fixtures.join("dataset.jsonl"));
    let dump = args.next().unwrap_or_else(|| fixtures.join("expected/predictions.jsonl"));

    let report = evaluate(&load_dataset(dataset)?, &load_predictions(dump)?)?;
    print!("{}", report.to_table());
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}
