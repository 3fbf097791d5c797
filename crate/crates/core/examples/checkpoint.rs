//! Saves a model in both checkpoint forms and reloads them.
//!
//! The deployment checkpoint carries only what inference needs; the full one adds the
//! vision-enhanced encoder.
//!
//! cargo run --release --example checkpoint

use vancl::backbone::{AnyModel, Model, ModelConfig};
use vancl::synthgen::{generate_corpus, GenSpec};
use vancl::vancl::{train, TrainConfig};
use vancl::with_model;

fn main() -> vancl::Result<()> {
    let spec = GenSpec {
        n_train: 20,
        n_test: 5,
        ..GenSpec::default()
    };
    let corpus = generate_corpus(&spec)?;
    let cfg = TrainConfig {
        lr: 2e-3,
        epochs: 1,
        ..TrainConfig::default()
    };
    let model_cfg = ModelConfig {
        d_model: 32,
        ffn_dim: 64,
        ..ModelConfig::default()
    };
    let model = train::<f32>(&corpus.train, &[], &spec.labels, &cfg, &model_cfg)?.model;

    let dir = std::env::temp_dir().join("vancl-checkpoint");
    std::fs::create_dir_all(&dir).map_err(|e| vancl::Error::io(&dir, e))?;
    let deploy = dir.join("model.ckpt");
    let full = dir.join("model_full.ckpt");
    model.save(&deploy, false)?;
    model.save(&full, true)?;
    for p in [&deploy, &full] {
        let bytes = std::fs::metadata(p).map_err(|e| vancl::Error::io(p, e))?.len();
        println!("{}: {bytes} bytes", p.display());
    }

    let back = Model::<f32>::load(&deploy)?;
    assert!(back.outer.is_none());
    let refs: Vec<_> = corpus.test.iter().collect();
    assert_eq!(back.infer(&refs)?.0, model.infer(&refs)?.0);
    println!("deployment checkpoint reproduces the trained model's outputs");

    // Loading without knowing the stored precision.
    let n = with_model!(AnyModel::load(&full)?, m => m.params.n_scalars());
    println!("backbone scalars: {n}");
    Ok(())
}
