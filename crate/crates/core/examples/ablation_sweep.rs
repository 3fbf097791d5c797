//! Runs one ablation suite on a small corpus and prints the markdown report.
//!
//! cargo run --release --example ablation_sweep -- [SUITE] [epochs]
//!
//! Finished cells are kept under `<out>/cells`, so rerunning after an interruption only
//! trains what is missing.

use vancl::backbone::ModelConfig;
use vancl::cli::{run_ablation, AblationOptions, RunConfig, Suite};
use vancl::synthgen::{generate_corpus, GenSpec};
use vancl::vancl::TrainConfig;

fn main() -> vancl::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let suite = match args.get(1).map_or("CONSISTENCY", String::as_str).to_uppercase().as_str() {
        "CONSISTENCY" => Suite::Consistency,
        "DIVERGENCE" => Suite::Divergence,
        "COLORS" => Suite::Colors,
        "LOWRES" => Suite::Lowres,
        "SHARING" => Suite::Sharing,
        "ENCODERS" => Suite::Encoders,
        "MODES" => Suite::Modes,
        other => panic!("unknown suite {other}"),
    };
    let epochs = args.get(2).map_or(3, |s| s.parse().expect("epochs"));

    let root = std::env::temp_dir().join("vancl-ablation");
    let data = root.join("data");
    let spec = GenSpec {
        n_train: 60,
        n_test: 20,
        ..GenSpec::default()
    };
    generate_corpus(&spec)?.save(&data, &spec.labels, Some(spec.digest()))?;

    let base = RunConfig {
        train: TrainConfig {
            lr: 2e-3,
            epochs,
            ..TrainConfig::default()
        },
        model: ModelConfig {
            d_model: 32,
            ffn_dim: 64,
            ..ModelConfig::default()
        },
    };
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let opts = AblationOptions {
        seeds: vec![0, 1],
        fail_after: None,
        jobs,
    };
    let out = root.join(suite.as_str());
    run_ablation(suite, &base, &data, &out, &opts)?;
    let md = out.join(format!("{}.md", suite.as_str().to_lowercase()));
    print!("{}", std::fs::read_to_string(&md).map_err(|e| vancl::Error::io(&md, e))?);
    Ok(())
}
