//! Constrained decoding: the highest scoring tag path that is valid BIO.
//!
//! cargo run --example decode_tags

use vancl::decode::{viterbi, TransitionMask};
use vancl::document::{entities_from_tags, LabelSet, TagSequence, TagSet};

fn main() -> vancl::Result<()> {
    let tagset = TagSet::new(&LabelSet::funsd());
    let mask = TransitionMask::bio(&tagset);
    println!("tags: {}", tagset.tags().iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" "));

    // Per-token scores over O, B-Q, I-Q, B-A, I-A, B-H, I-H. Greedy decoding would start
    // with I-QUESTION, which no valid sequence can.
    let scores: [[f64; 7]; 4] = [
        [-2.0, -0.6, -0.1, -3.0, -3.0, -3.0, -3.0],
        [-2.0, -2.0, -0.2, -3.0, -3.0, -3.0, -3.0],
        [-1.0, -3.0, -3.0, -0.9, -0.5, -3.0, -3.0],
        [-0.3, -3.0, -3.0, -3.0, -0.4, -3.0, -3.0],
    ];
    let rows: Vec<&[f64]> = scores.iter().map(|r| r.as_slice()).collect();

    let greedy: Vec<String> = scores
        .iter()
        .map(|r| {
            let k = (0..7).max_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap();
            tagset.tag(k).to_string()
        })
        .collect();
    println!("greedy:  {}", greedy.join(" "));

    let path = viterbi(&rows, &mask)?;
    let tags = TagSequence::new(path.iter().map(|&k| tagset.tag(k).clone()).collect());
    let shown: Vec<String> = path.iter().map(|&k| tagset.tag(k).to_string()).collect();
    println!("viterbi: {}", shown.join(" "));
    assert!(tags.is_valid_bio());
    println!("entities: {:?}", entities_from_tags(&tags));
    Ok(())
}
