mod common;

use common::oracles::{brute_force_decode, crafted_document, golden, random_distribution, random_entities};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vancl::backbone::layout_bucket;
use vancl::decode::{viterbi, TransitionMask};
use vancl::document::{entities_from_tags, normalize_box, tags_from_entities, Entity, LabelSet, TagSet};
use vancl::eval::{entity_prf, score_corpus};
use vancl::image::PixelRect;
use vancl::paint::{builtin_scheme, paint_document, ColorScheme, PaintMode};
use vancl::synthgen::generate_document;
use vancl::vancl::loss::{js_row, kl_row};

const LABELS: [&str; 3] = ["QUESTION", "ANSWER", "HEADER"];

fn entity_list() -> impl Strategy<Value = (Vec<Entity>, usize)> {
    (any::<u64>(), 0usize..30).prop_map(|(seed, n)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (random_entities(&mut rng, n, &LABELS), n)
    })
}

proptest! {
    #[test]
    fn bio_round_trip((ents, n) in entity_list(), extra in 0usize..5) {
        let tags = tags_from_entities(&ents, n + extra).unwrap();
        prop_assert!(tags.is_valid_bio());
        prop_assert_eq!(entities_from_tags(&tags), ents);
    }

    #[test]
    fn normalize_box_monotone_and_identity_on_grid_pages(
        a in 0u32..=1000, b in 0u32..=1000, c in 0u32..=1000, d in 0u32..=1000,
        bump in 0u32..50, w in 1u32..2000, h in 1u32..2000,
    ) {
        let (l, r) = (a.min(b), a.max(b));
        let (t, bo) = (c.min(d), c.max(d));
        let id = normalize_box(PixelRect::new(l, t, r, bo), 1000, 1000).unwrap();
        prop_assert_eq!((id.x1, id.y1, id.x2, id.y2), (l, t, r, bo));
        let scale = |v: u32, s: u32| v * s / 1000;
        let rect = PixelRect::new(scale(l, w), scale(t, h), scale(r, w), scale(bo, h));
        let wider = PixelRect::new(rect.left, rect.top, (rect.right + bump).min(w), (rect.bottom + bump).min(h));
        let x = normalize_box(rect, w, h).unwrap();
        let y = normalize_box(wider, w, h).unwrap();
        prop_assert!(y.x2 >= x.x2 && y.y2 >= x.y2 && y.x1 == x.x1 && y.y1 == x.y1);
    }

    #[test]
    fn layout_buckets_in_range(c in 0u32..=1000) {
        prop_assert!(layout_bucket(c, 32) < 32);
        prop_assert!(layout_bucket(c, 32) <= layout_bucket(c.saturating_add(1).min(1000), 32));
    }

    #[test]
    fn divergence_bounds(seed in any::<u64>(), k in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_distribution(&mut rng, k);
        let q = random_distribution(&mut rng, k);
        let js = js_row(&p, &q);
        prop_assert!((-1e-12..=std::f64::consts::LN_2 + 1e-12).contains(&js));
        prop_assert!(kl_row(&p, &q) >= -1e-12);
        prop_assert!(js_row(&p, &p).abs() < 1e-9 && kl_row(&p, &p).abs() < 1e-9);
        prop_assert!((js - js_row(&q, &p)).abs() < 1e-12);
    }

    #[test]
    fn viterbi_matches_exhaustive_search(seed in any::<u64>(), n in 1usize..=5) {
        use rand::Rng;
        let tagset = TagSet::new(&LabelSet::funsd());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<Vec<f64>> = (0..n).map(|_| (0..7).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
        let rows: Vec<&[f64]> = scores.iter().map(|r| r.as_slice()).collect();
        let mask = TransitionMask::bio(&tagset);
        let path = viterbi(&rows, &mask).unwrap();
        prop_assert_eq!(&path, &brute_force_decode(&scores, &tagset));

        let tags = vancl::document::TagSequence::new(path.iter().map(|&t| tagset.tag(t).clone()).collect());
        prop_assert!(tags.is_valid_bio());

        let col = rng.gen_range(0..n);
        let shift = rng.gen_range(-10.0..10.0);
        let mut shifted = scores.clone();
        shifted[col].iter_mut().for_each(|v| *v += shift);
        let rows: Vec<&[f64]> = shifted.iter().map(|r| r.as_slice()).collect();
        prop_assert_eq!(viterbi(&rows, &mask).unwrap(), path);
    }

    #[test]
    fn metric_bounds_and_duplication((gold, n) in entity_list(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pred = random_entities(&mut rng, n, &LABELS);
        let (prf, counts) = entity_prf(&pred, &gold);
        for v in [prf.p, prf.r, prf.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(prf.f1 <= prf.p.max(prf.r) + 1e-12);
        prop_assert_eq!(prf.f1 == 0.0, counts.micro.tp == 0);

        let labels: Vec<String> = LABELS.iter().map(|s| s.to_string()).collect();
        let once = score_corpus(&[(pred.clone(), gold.clone())], &labels).unwrap();
        prop_assert_eq!(once.micro, prf);
        let twice = score_corpus(&[(pred.clone(), gold.clone()), (pred, gold.clone())], &labels).unwrap();
        prop_assert_eq!(twice.micro, once.micro);
        let support: usize = once.per_type.values().map(|t| t.support).sum();
        prop_assert_eq!(support, gold.len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn painting_touches_only_boxes_and_is_repeatable(index in 0usize..500, row in 1usize..=8) {
        let spec = vancl::synthgen::GenSpec::default();
        let doc = generate_document(&spec, index, format!("d{index}")).unwrap();
        let scheme = builtin_scheme(row).unwrap();
        let painted = paint_document(&doc, &scheme).unwrap().image;
        for y in 0..doc.image.height() {
            for x in 0..doc.image.width() {
                if !doc.segments.iter().any(|s| s.pixel_box.contains(x, y)) {
                    prop_assert_eq!(painted.get(x, y), doc.image.get(x, y));
                }
            }
        }
        prop_assert_eq!(&painted, &paint_document(&doc, &scheme).unwrap().image);
        if scheme.mapping.values().all(|s| s.mode == PaintMode::Fill) {
            let mut again = doc.clone();
            again.image = painted.clone();
            prop_assert_eq!(paint_document(&again, &scheme).unwrap().image, painted);
        }
        let noop = ColorScheme::noop(&spec.labels);
        prop_assert_eq!(paint_document(&doc, &noop).unwrap().image, doc.image.clone());
    }
}

#[test]
fn crafted_page_matches_golden_bytes() {
    let doc = crafted_document();
    assert_eq!(doc.image.to_ppm(), golden("crafted_source.ppm"));
    let painted = paint_document(&doc, &builtin_scheme(1).unwrap()).unwrap();
    assert_eq!(painted.image.to_ppm(), golden("crafted_row1_painted.ppm"));
}
