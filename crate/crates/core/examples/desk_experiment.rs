//! The desk-scale comparison: VANCL, the same dual-flow run without consistency, and a
//! single-flow baseline, each over several seeds on the default synthetic corpus.
//!
//! cargo run --release --example desk_experiment -- [n_seeds] [epochs] [lr]

use std::time::Instant;

use vancl::backbone::ModelConfig;
use vancl::eval::evaluate;
use vancl::synthgen::{generate_corpus, GenSpec};
use vancl::vancl::{train, Mode, TrainConfig};

fn main() -> vancl::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let n_seeds: u64 = args.get(1).map_or(3, |s| s.parse().expect("n_seeds"));
    let epochs = args.get(2).map_or(20, |s| s.parse().expect("epochs"));
    let lr = args.get(3).map_or(2e-3, |s| s.parse().expect("lr"));

    let spec = GenSpec::default();
    let corpus = generate_corpus(&spec)?;
    let model_cfg = ModelConfig::default();
    let start = Instant::now();
    for (name, mode, baseline) in [("VANCL", Mode::Vancl, false), ("NONE", Mode::None, false), ("baseline", Mode::None, true)] {
        let mut f1s = Vec::new();
        for seed in 0..n_seeds {
            let cfg = TrainConfig {
                lr,
                epochs,
                seed,
                mode,
                baseline,
                ..TrainConfig::default()
            };
            let out = train::<f32>(&corpus.train, &[], &spec.labels, &cfg, &model_cfg)?;
            let f1 = evaluate(&out.model, &corpus.test)?.micro.f1;
            println!("{name} seed {seed}: test F1 {:.2}", 100.0 * f1);
            f1s.push(100.0 * f1);
        }
        let mean = f1s.iter().sum::<f64>() / f1s.len() as f64;
        let sd = (f1s.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (f1s.len() - 1).max(1) as f64).sqrt();
        println!("{name}: {mean:.2} +- {sd:.2}");
    }
    println!("total {:.0}s", start.elapsed().as_secs_f64());
    Ok(())
}
