//! Trains briefly, decodes the test pages and scores them entity by entity.
//!
//! cargo run --release --example predict_and_score

use vancl::backbone::ModelConfig;
use vancl::decode::predict;
use vancl::eval::{entity_prf, evaluate};
use vancl::synthgen::{generate_corpus, GenSpec};
use vancl::vancl::{train, TrainConfig};

fn main() -> vancl::Result<()> {
    let spec = GenSpec {
        n_train: 60,
        n_test: 10,
        ambiguity: 0.0,
        ..GenSpec::default()
    };
    let corpus = generate_corpus(&spec)?;
    let cfg = TrainConfig {
        lr: 2e-3,
        epochs: 6,
        ..TrainConfig::default()
    }
    .as_baseline();
    let model = train::<f32>(&corpus.train, &[], &spec.labels, &cfg, &ModelConfig::default())?.model;

    let refs: Vec<_> = corpus.test.iter().collect();
    for (p, doc) in predict(&model, &refs)?.iter().zip(&corpus.test).take(3) {
        let (prf, _) = entity_prf(&p.entities, &doc.gold_entities());
        println!("{}: {} entities predicted, F1 {:.2}", p.doc_id, p.entities.len(), prf.f1);
        for e in p.entities.iter().take(3) {
            let words: Vec<_> = doc.tokens().skip(e.start).take(e.end - e.start).map(|(_, w)| w).collect();
            println!("    {:<8} [{}, {}) {}", e.label, e.start, e.end, words.join(" "));
        }
    }

    let report = evaluate(&model, &corpus.test)?;
    println!("micro P {:.3} R {:.3} F1 {:.3}", report.micro.p, report.micro.r, report.micro.f1);
    for (label, m) in &report.per_type {
        println!("  {label:<8} F1 {:.3} (support {})", m.f1, m.support);
    }
    Ok(())
}
