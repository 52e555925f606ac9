//! Compare the three fusion modes on the golden dataset without re-encoding.

use std::{path::PathBuf, sync::Arc};

use ktrlf::{
    embedding::{encode_query, ReferenceHashEmbedder},
    index::FusionMode,
    knowledge::KnowledgeStore,
    linking::Gazetteer,
    metrics::evaluate,
    model::{load_dataset, Prediction, PredictionList},
    pipeline::{search_with, Engine},
};

fn main() -> ktrlf::Result<()> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/golden");
    let dataset = load_dataset(fixtures.join("dataset.jsonl"))?;
    let engine = Engine::new(
        Some(Arc::new(Gazetteer::load(fixtures.join("gazetteer.jsonl"))?)),
        Arc::new(KnowledgeStore::fixture_dir(fixtures.join("knowledge"))?),
        Arc::new(ReferenceHashEmbedder::new(64)),
    );
    let components: Vec<_> = dataset
        .records
        .iter()
        .map(|r| engine.components(&r.document))
        .collect::<ktrlf::Result<_>>()?;

    println!("{:<15} {:>8} {:>12} {:>8}", "mode", "List EM", "List Overlap", "MAP");
    for mode in FusionMode::ALL {
        let mut preds = Vec::new();
        for (rec, c) in dataset.records.iter().zip(&components) {
            let index = c.fuse(mode, false);
            for q in &rec.queries {
                let hits = search_with(&index, &encode_query(engine.provider.as_ref(), &q.query)?, engine.search)?;
                preds.push(PredictionList {
                    qid: q.qid.clone(),
                    ranked: hits
                        .iter()
                        .map(|h| Prediction {
                            text: h.mention.surface.clone(),
                            span: Some(h.mention.span),
                            score: Some(h.score),
                        })
                        .collect(),
                });
            }
        }
        let r = evaluate(&dataset, &preds)?;
        let get = |m: &str| r.corpus.get(m).unwrap_or(f64::NAN);
        println!("{:<15} {:>8.3} {:>12.3} {:>8.3}", mode.as_str(), get("list_em_f1"), get("list_overlap_f1"), get("ap_iou50"));
    }
    Ok(())
}
