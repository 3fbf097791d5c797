//! BIO-constrained Viterbi decoding.

use serde::Serialize;

use crate::backbone::{Model, Scalar, TokenDistributions};
use crate::document::{entities_from_tags, Document, Entity, Tag, TagSequence, TagSet};
use crate::error::{Error, Result};

/// Legal tag transitions, plus legal first tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionMask {
    n: usize,
    start: Vec<bool>,
    allowed: Vec<bool>,
}

impl TransitionMask {
    pub fn bio(tagset: &TagSet) -> Self {
        let tags = tagset.tags();
        let n = tags.len();
        let start = tags.iter().map(|t| t.may_follow(None)).collect();
        let mut allowed = vec![false; n * n];
        for (i, prev) in tags.iter().enumerate() {
            for (j, next) in tags.iter().enumerate() {
                allowed[i * n + j] = next.may_follow(Some(prev));
            }
        }
        Self { n, start, allowed }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn can_start(&self, tag: usize) -> bool {
        self.start[tag]
    }

    pub fn allowed(&self, prev: usize, next: usize) -> bool {
        self.allowed[prev * self.n + next]
    }
}

/// Highest-scoring legal tag path for `scores` (`[length][n_tags]` log-probabilities).
/// Ties go to the lowest tag index.
pub fn viterbi(scores: &[&[f64]], mask: &TransitionMask) -> Result<Vec<usize>> {
    let n = mask.len();
    if scores.is_empty() {
        return Err(Error::Decode("empty sequence".into()));
    }
    if let Some(t) = scores.iter().position(|r| r.len() != n) {
        return Err(Error::Decode(format!("token {t} has {} scores for {n} tags", scores[t].len())));
    }
    if scores.iter().flat_map(|r| r.iter()).any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::Decode("scores must be finite".into()));
    }
    let ninf = f64::NEG_INFINITY;
    let mut delta: Vec<f64> = (0..n).map(|j| if mask.can_start(j) { scores[0][j] } else { ninf }).collect();
    let mut back = Vec::with_capacity(scores.len());
    for (t, row) in scores.iter().enumerate().skip(1) {
        let mut next = vec![ninf; n];
        let mut arg = vec![0usize; n];
        for j in 0..n {
            let mut best = ninf;
            let mut best_i = usize::MAX;
            for (i, &d) in delta.iter().enumerate() {
                if !mask.allowed(i, j) || d == ninf {
                    continue;
                }
                if best_i == usize::MAX || d > best {
                    best = d;
                    best_i = i;
                }
            }
            if best_i != usize::MAX {
                next[j] = best + row[j];
                arg[j] = best_i;
            }
        }
        if next.iter().all(|&v| v == ninf) {
            return Err(Error::Decode(format!("no legal path reaches token {t}")));
        }
        back.push(arg);
        delta = next;
    }
    let mut last = None;
    for (j, &d) in delta.iter().enumerate() {
        if d != ninf && last.map_or(true, |(_, b)| d > b) {
            last = Some((j, d));
        }
    }
    let (mut cur, _) = last.ok_or_else(|| Error::Decode("no legal path".into()))?;
    let mut path = vec![cur; scores.len()];
    for (t, arg) in back.iter().enumerate().rev() {
        cur = arg[cur];
        path[t] = cur;
    }
    Ok(path)
}

/// Viterbi over sequence `b` of `dists`, returned as tags.
pub fn decode_sequence(dists: &TokenDistributions, b: usize, tagset: &TagSet) -> Result<TagSequence> {
    let len = dists.len_of(b);
    if len == 0 {
        return Ok(TagSequence::new(Vec::new()));
    }
    let rows: Vec<&[f64]> = (0..len).map(|i| dists.score_row(b, i)).collect();
    let path = viterbi(&rows, &TransitionMask::bio(tagset))?;
    Ok(TagSequence::new(path.into_iter().map(|i| tagset.tag(i).clone()).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub doc_id: String,
    pub entities: Vec<Entity>,
    pub tags: Vec<Tag>,
}

/// Decodes the documents on their original images. Tokens past the model's maximum
/// sequence length are tagged `O`.
pub fn predict<T: Scalar>(model: &Model<T>, docs: &[&Document]) -> Result<Vec<Prediction>> {
    let tagset = model.tagset();
    let mut out = Vec::with_capacity(docs.len());
    for chunk in docs.chunks(16) {
        let live: Vec<&Document> = chunk.iter().copied().filter(|d| d.n_tokens() > 0).collect();
        let dists = if live.is_empty() { None } else { Some(model.infer(&live)?.0) };
        let mut k = 0;
        for d in chunk {
            let mut tags = if d.n_tokens() == 0 {
                Vec::new()
            } else {
                let seq = decode_sequence(dists.as_ref().expect("non-empty chunk"), k, &tagset)?;
                k += 1;
                seq.tags
            };
            tags.resize(d.n_tokens(), Tag::O);
            let seq = TagSequence::new(tags);
            out.push(Prediction {
                doc_id: d.doc_id.clone(),
                entities: entities_from_tags(&seq),
                tags: seq.tags,
            });
        }
    }
    Ok(out)
}

pub fn predict_entities<T: Scalar>(model: &Model<T>, doc: &Document) -> Result<Vec<Entity>> {
    Ok(predict(model, &[doc])?.remove(0).entities)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::document::LabelSet;

    fn tagset() -> TagSet {
        TagSet::new(&LabelSet::funsd())
    }

    #[test]
    fn mask_rules() {
        let ts = tagset();
        let m = TransitionMask::bio(&ts);
        let idx = |s: &str| ts.index_of(&s.parse().unwrap()).unwrap();
        assert!(!m.can_start(idx("I-QUESTION")));
        assert!(m.can_start(idx("B-QUESTION")));
        assert!(!m.allowed(idx("O"), idx("I-ANSWER")));
        assert!(!m.allowed(idx("B-QUESTION"), idx("I-ANSWER")));
        assert!(m.allowed(idx("B-ANSWER"), idx("I-ANSWER")));
        assert!(m.allowed(idx("I-ANSWER"), idx("I-ANSWER")));
        assert!(m.allowed(idx("I-ANSWER"), idx("B-HEADER")));
    }

    #[test]
    fn single_token_never_starts_inside() {
        let ts = tagset();
        let iq = ts.index_of(&"I-QUESTION".parse().unwrap()).unwrap();
        let mut row = vec![-5.0; 7];
        row[iq] = -0.01;
        row[3] = -2.0;
        let path = viterbi(&[&row], &TransitionMask::bio(&ts)).unwrap();
        assert_eq!(path, vec![3]);
    }

    #[test]
    fn legal_argmax_is_kept() {
        let ts = tagset();
        let rows = [[-0.1, -3.0, -3.0, -3.0, -3.0, -3.0, -3.0], [-3.0, -0.1, -3.0, -3.0, -3.0, -3.0, -3.0], [
            -3.0, -3.0, -0.1, -3.0, -3.0, -3.0, -3.0,
        ]];
        let refs: Vec<&[f64]> = rows.iter().map(|r| &r[..]).collect();
        assert_eq!(viterbi(&refs, &TransitionMask::bio(&ts)).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let ts = tagset();
        let rows = [[0.0; 7], [0.0; 7]];
        let refs: Vec<&[f64]> = rows.iter().map(|r| &r[..]).collect();
        assert_eq!(viterbi(&refs, &TransitionMask::bio(&ts)).unwrap(), vec![0, 0]);
    }
}
