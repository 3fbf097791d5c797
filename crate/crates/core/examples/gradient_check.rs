//! Compares backpropagated gradients with central differences on a tiny model.
//!
//! cargo run --release --example gradient_check

use vancl::backbone::{check_gradients, init_params, CnnSpec, Flow, ModelConfig, PreparedDoc, TokenBatch, Vocab};
use vancl::document::TagSet;
use vancl::paint::{builtin_scheme, paint_document};
use vancl::synthgen::{generate_corpus, GenSpec};
use vancl::vancl::{resolve_model_config, TrainConfig};

fn main() -> vancl::Result<()> {
    let spec = GenSpec {
        n_train: 2,
        n_test: 0,
        segments_per_doc: 6,
        ..GenSpec::default()
    };
    let docs = generate_corpus(&spec)?.train;
    let vocab = Vocab::build(&docs);
    let tiny = ModelConfig {
        d_model: 8,
        n_layers: 1,
        n_heads: 1,
        ffn_dim: 16,
        max_seq_len: 64,
        roi_patch: (4, 4),
        dropout_p: 0.0,
        inner_encoder: CnnSpec { depth: 1, channels: 2 },
        outer_encoder: Some(CnnSpec { depth: 2, channels: 2 }),
        ..ModelConfig::default()
    };
    let cfg = resolve_model_config(&tiny, &vocab, &spec.labels, &TrainConfig::default())?;
    let tagset = TagSet::new(&spec.labels);
    let scheme = builtin_scheme(1)?;

    let mut sl = Vec::new();
    let mut ve = Vec::new();
    for d in &docs {
        let p = PreparedDoc::new(d, &d.image, &vocab, &tagset, cfg.roi_patch, cfg.layout_buckets, cfg.max_seq_len)?;
        ve.push(p.with_image(d, &paint_document(d, &scheme)?.image));
        sl.push(p);
    }
    let sl = TokenBatch::from_prepared(&sl.iter().collect::<Vec<_>>())?;
    let ve = TokenBatch::from_prepared(&ve.iter().collect::<Vec<_>>())?;

    let (params, outer) = init_params::<f64>(&cfg, 1);
    let a = check_gradients::<f64, f64>(&cfg, &params, None, &sl, Flow::Sl, 60, 1e-5, 1)?;
    let b = check_gradients::<f64, f64>(&cfg, &params, Some(&outer), &ve, Flow::Ve, 60, 1e-5, 2)?;
    println!("standard flow: {} probes, max relative error {:.2e} at {:?}", a.probes, a.max_rel_err, a.worst);
    println!("painted flow:  {} probes, max relative error {:.2e} at {:?}", b.probes, b.max_rel_err, b.worst);
    Ok(())
}
