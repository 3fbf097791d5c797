#![allow(dead_code)]

use rand::Rng;
use vancl::document::{Document, Entity, Tag, TagSet, TextSegment};
use vancl::image::{PixelRect, RasterImage};

/// Exhaustive search over every legal tag sequence. Legality is read off the tags:
/// an `I-t` must follow `B-t` or `I-t`.
pub fn brute_force_decode(scores: &[Vec<f64>], tagset: &TagSet) -> Vec<usize> {
    let k = tagset.len();
    let n = scores.len();
    let legal = |prev: Option<usize>, next: usize| match tagset.tag(next) {
        Tag::I(t) => matches!(prev.map(|p| tagset.tag(p)), Some(Tag::B(u)) | Some(Tag::I(u)) if u == t),
        _ => true,
    };
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut path = vec![0usize; n];
    let total = k.pow(n as u32);
    for code in 0..total {
        let mut c = code;
        for i in (0..n).rev() {
            path[i] = c % k;
            c /= k;
        }
        if !(0..n).all(|i| legal(if i == 0 { None } else { Some(path[i - 1]) }, path[i])) {
            continue;
        }
        let s: f64 = (0..n).map(|i| scores[i][path[i]]).sum();
        if best.as_ref().is_none_or(|(b, _)| s > *b) {
            best = Some((s, path.clone()));
        }
    }
    best.expect("O everywhere is always legal").1
}

/// Non-overlapping entities over `n` tokens, in order.
pub fn random_entities(rng: &mut impl Rng, n: usize, labels: &[&str]) -> Vec<Entity> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        i += rng.gen_range(0..3);
        if i >= n {
            break;
        }
        let len = rng.gen_range(1..=(n - i).min(4));
        out.push(Entity::new(labels[rng.gen_range(0..labels.len())], i, i + len));
        i += len;
    }
    out
}

pub fn random_distribution(rng: &mut impl Rng, k: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..k)
        .map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen::<f64>() })
        .collect();
    if v.iter().all(|&x| x == 0.0) {
        v[0] = 1.0;
    }
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// The crafted 10x10 page: white with a dark diagonal, four boxes, the second overlapping
/// the first at pixel (5, 4).
pub fn crafted_document() -> Document {
    let mut img = RasterImage::filled(10, 10, [255; 3]);
    for i in 0..10 {
        img.set(i, i, [40; 3]);
    }
    let boxes = [
        (PixelRect::new(2, 2, 6, 5), "QUESTION"),
        (PixelRect::new(5, 4, 9, 8), "ANSWER"),
        (PixelRect::new(0, 8, 3, 10), "HEADER"),
        (PixelRect::new(7, 0, 10, 2), "OTHER"),
    ];
    let segments = boxes
        .iter()
        .enumerate()
        .map(|(i, (r, l))| TextSegment::new(i as u32, vec![format!("w{i}")], *r, *l, 10, 10).unwrap())
        .collect();
    Document::new("crafted", segments, img).unwrap()
}

pub fn golden(name: &str) -> Vec<u8> {
    std::fs::read(std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)).unwrap()
}
