//! Trains a small model with the consistency objective and prints the epoch log.
//!
//! cargo run --release --example train_model -- [mode] [epochs]
//!
//! `mode` is one of vancl, none, rdrop, mutual or baseline.

use vancl::backbone::ModelConfig;
use vancl::eval::evaluate;
use vancl::synthgen::{generate_corpus, GenSpec};
use vancl::vancl::{train, Mode, TrainConfig};

fn main() -> vancl::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map_or("vancl", String::as_str);
    let epochs = args.get(2).map_or(8, |s| s.parse().expect("epochs"));

    let spec = GenSpec {
        n_train: 100,
        n_test: 30,
        ..GenSpec::default()
    };
    let corpus = generate_corpus(&spec)?;
    let mut cfg = TrainConfig {
        lr: 2e-3,
        epochs,
        ..TrainConfig::default()
    };
    cfg = match mode {
        "vancl" => cfg,
        "none" => TrainConfig { mode: Mode::None, ..cfg },
        "rdrop" => TrainConfig { mode: Mode::Rdrop, ..cfg },
        "mutual" => TrainConfig { mode: Mode::Mutual, ..cfg },
        "baseline" => cfg.as_baseline(),
        other => panic!("unknown mode {other}"),
    };
    let model_cfg = ModelConfig {
        d_model: 32,
        ffn_dim: 64,
        ..ModelConfig::default()
    };

    let out = train::<f32>(&corpus.train, &corpus.test, &spec.labels, &cfg, &model_cfg)?;
    for e in &out.log {
        println!(
            "epoch {:>2}  L_sup {:.4}  L_cons {:.4}  L_final {:.4}  dev F1 {:.3}",
            e.epoch,
            e.l_sup,
            e.l_cons,
            e.l_final,
            e.dev_f1.unwrap_or(f64::NAN)
        );
    }
    let report = evaluate(&out.model, &corpus.test)?;
    println!("test micro F1 {:.2}", 100.0 * report.micro.f1);
    Ok(())
}
