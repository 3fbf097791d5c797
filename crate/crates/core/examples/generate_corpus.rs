//! Generates the synthetic form corpus and shows how much the words give away.
//!
//! cargo run --release --example generate_corpus -- [out_dir] [ambiguity]

use std::collections::BTreeMap;
use std::path::PathBuf;

use vancl::synthgen::{generate_corpus, GenSpec};

fn main() -> vancl::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let out = args.get(1).map_or_else(|| std::env::temp_dir().join("vancl-corpus"), PathBuf::from);
    let ambiguity = args.get(2).map_or(0.5, |s| s.parse().expect("ambiguity"));

    let spec = GenSpec {
        ambiguity,
        ..GenSpec::default()
    };
    let corpus = generate_corpus(&spec)?;
    corpus.save(&out, &spec.labels, Some(spec.digest()))?;

    let mut per_label: BTreeMap<&str, usize> = BTreeMap::new();
    for d in &corpus.train {
        for s in &d.segments {
            *per_label.entry(&s.label).or_default() += 1;
        }
    }
    println!("{} train / {} test pages in {}", corpus.train.len(), corpus.test.len(), out.display());
    println!("segments per label: {per_label:?}");

    let first = &corpus.train[0];
    for s in first.segments.iter().take(4) {
        println!("  {:<9} {:?} {}", s.label, s.pixel_box, s.tokens.join(" "));
    }
    Ok(())
}
