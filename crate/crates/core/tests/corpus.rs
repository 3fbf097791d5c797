use std::collections::{BTreeMap, HashMap};

use vancl::document::{Document, OTHER};
use vancl::synthgen::{generate_corpus, GenSpec};

/// Accuracy of predicting segment types from token identity alone: each train token votes
/// with its label counts.
fn token_oracle(train: &[Document], test: &[Document]) -> f64 {
    let mut votes: HashMap<&str, BTreeMap<&str, usize>> = HashMap::new();
    for d in train {
        for s in &d.segments {
            for t in &s.tokens {
                *votes.entry(t).or_default().entry(&s.label).or_default() += 1;
            }
        }
    }
    accuracy(test, |_, s| {
        let mut tally: BTreeMap<&str, usize> = BTreeMap::new();
        for t in &s.tokens {
            for (l, c) in votes.get(t.as_str()).into_iter().flatten() {
                *tally.entry(l).or_default() += c;
            }
        }
        tally.into_iter().max_by_key(|(_, c)| *c).map(|(l, _)| l.to_string()).unwrap_or_default()
    })
}

/// Background color inside the box (the most common one) plus the color of its corner pixel.
fn pixel_feature(d: &Document, s: &vancl::document::TextSegment) -> ([u8; 3], [u8; 3]) {
    let r = s.pixel_box;
    let mut counts: HashMap<[u8; 3], usize> = HashMap::new();
    for y in r.top + 1..r.bottom.saturating_sub(1) {
        for x in r.left + 1..r.right.saturating_sub(1) {
            *counts.entry(d.image.get(x, y)).or_default() += 1;
        }
    }
    let bg = counts.into_iter().max_by_key(|(c, n)| (*n, *c)).map(|(c, _)| c).unwrap_or([0; 3]);
    (bg, d.image.get(r.left, r.top))
}

fn pixel_oracle(train: &[Document], test: &[Document]) -> f64 {
    let mut table: HashMap<([u8; 3], [u8; 3]), BTreeMap<String, usize>> = HashMap::new();
    for d in train {
        for s in &d.segments {
            *table.entry(pixel_feature(d, s)).or_default().entry(s.label.clone()).or_default() += 1;
        }
    }
    accuracy(test, |d, s| {
        table
            .get(&pixel_feature(d, s))
            .and_then(|m| m.iter().max_by_key(|(_, c)| **c).map(|(l, _)| l.clone()))
            .unwrap_or_default()
    })
}

fn accuracy(docs: &[Document], mut f: impl FnMut(&Document, &vancl::document::TextSegment) -> String) -> f64 {
    let (mut hit, mut n) = (0, 0);
    for d in docs {
        for s in &d.segments {
            hit += usize::from(f(d, s) == s.label);
            n += 1;
        }
    }
    hit as f64 / n as f64
}

fn majority_rate(docs: &[Document]) -> f64 {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut n = 0;
    for d in docs {
        for s in &d.segments {
            *counts.entry(&s.label).or_default() += 1;
            n += 1;
        }
    }
    *counts.values().max().unwrap() as f64 / n as f64
}

#[test]
fn full_ambiguity_hides_type_from_text_but_not_from_pixels() {
    let spec = GenSpec {
        ambiguity: 1.0,
        ..GenSpec::default()
    };
    let c = generate_corpus(&spec).unwrap();
    let text = token_oracle(&c.train, &c.test);
    let chance = majority_rate(&c.test);
    assert!(text <= chance + 0.05, "text oracle {text} vs majority {chance}");
    assert_eq!(pixel_oracle(&c.train, &c.test), 1.0);
}

#[test]
fn no_ambiguity_makes_text_sufficient() {
    let spec = GenSpec {
        ambiguity: 0.0,
        ..GenSpec::default()
    };
    let c = generate_corpus(&spec).unwrap();
    assert_eq!(token_oracle(&c.train, &c.test), 1.0);
}

#[test]
fn default_corpus_is_labelled_throughout() {
    let spec = GenSpec::default();
    let c = generate_corpus(&spec).unwrap();
    assert_eq!((c.train.len(), c.test.len()), (250, 50));
    for d in c.train.iter().chain(&c.test) {
        d.validate().unwrap();
        d.validate_labels(&spec.labels).unwrap();
        assert_eq!(d.segments.len(), 12);
        assert!(d.gold_tags().is_valid_bio());
        for s in &d.segments {
            assert!(s.label == OTHER || spec.labels.contains(&s.label));
        }
    }
}
