//! Exports per-token hidden states from both flows and compares entity-type centroids.
//!
//! cargo run --release --example export_embeddings

use std::collections::BTreeMap;

use vancl::backbone::ModelConfig;
use vancl::cli::embeddings_tsv;
use vancl::paint::builtin_scheme;
use vancl::synthgen::{generate_corpus, GenSpec};
use vancl::vancl::{train, TrainConfig};

/// Mean vector per tag, read back from the TSV.
fn centroids(tsv: &str) -> BTreeMap<String, Vec<f64>> {
    let mut sums: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
    for line in tsv.lines().skip(1) {
        let cols: Vec<&str> = line.split('\t').collect();
        let v: Vec<f64> = cols[3..].iter().map(|x| x.parse().unwrap()).collect();
        let e = sums.entry(cols[2].to_string()).or_insert_with(|| (vec![0.0; v.len()], 0));
        e.0.iter_mut().zip(&v).for_each(|(s, x)| *s += x);
        e.1 += 1;
    }
    sums.into_iter().map(|(k, (s, n))| (k, s.into_iter().map(|x| x / n as f64).collect())).collect()
}

fn main() -> vancl::Result<()> {
    let spec = GenSpec {
        n_train: 60,
        n_test: 10,
        ..GenSpec::default()
    };
    let corpus = generate_corpus(&spec)?;
    let cfg = TrainConfig {
        lr: 2e-3,
        epochs: 4,
        ..TrainConfig::default()
    };
    let model_cfg = ModelConfig {
        d_model: 32,
        ffn_dim: 64,
        ..ModelConfig::default()
    };
    let model = train::<f32>(&corpus.train, &[], &spec.labels, &cfg, &model_cfg)?.model;

    let sl = embeddings_tsv(&model, &corpus.test, None)?;
    let ve = embeddings_tsv(&model, &corpus.test, Some(&builtin_scheme(1)?))?;
    println!("{} token rows, {} columns", sl.lines().count() - 1, sl.lines().next().unwrap().split('\t').count());

    let (a, b) = (centroids(&sl), centroids(&ve));
    for (tag, x) in &a {
        let y = &b[tag];
        let dist = x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        println!("{tag:<11} standard vs painted centroid distance {dist:.3}");
    }
    Ok(())
}
