//! Exact-match entity precision, recall and F1.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::backbone::{Model, Scalar};
use crate::decode::predict;
use crate::document::{Document, Entity};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn merge(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn prf(&self) -> Prf {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let p = ratio(self.tp, self.tp + self.fp);
        let r = ratio(self.tp, self.tp + self.fn_);
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        Prf { p, r, f1 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
}

/// Micro counts plus counts per entity type over one document.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntityCounts {
    pub micro: Counts,
    pub per_type: BTreeMap<String, Counts>,
}

impl EntityCounts {
    pub fn merge(&mut self, other: &EntityCounts) {
        self.micro.merge(other.micro);
        for (k, c) in &other.per_type {
            self.per_type.entry(k.clone()).or_default().merge(*c);
        }
    }
}

/// An entity is correct iff its type and span both match a gold entity.
pub fn entity_counts(pred: &[Entity], gold: &[Entity]) -> EntityCounts {
    let key = |e: &Entity| (e.label.clone(), e.start, e.end);
    let gold_set: HashSet<_> = gold.iter().map(key).collect();
    let pred_set: HashSet<_> = pred.iter().map(key).collect();
    let mut out = EntityCounts::default();
    for k in &pred_set {
        let c = out.per_type.entry(k.0.clone()).or_default();
        if gold_set.contains(k) {
            c.tp += 1;
            out.micro.tp += 1;
        } else {
            c.fp += 1;
            out.micro.fp += 1;
        }
    }
    for k in gold_set.difference(&pred_set) {
        out.per_type.entry(k.0.clone()).or_default().fn_ += 1;
        out.micro.fn_ += 1;
    }
    out
}

pub fn entity_prf(pred: &[Entity], gold: &[Entity]) -> (Prf, EntityCounts) {
    let c = entity_counts(pred, gold);
    (c.micro.prf(), c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeMetrics {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
    pub support: usize,
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub micro: Prf,
    pub per_type: BTreeMap<String, TypeMetrics>,
    pub n_docs: usize,
}

impl MetricsReport {
    /// Corpus-level metrics from summed counts. `labels` are always listed, even with no support.
    pub fn from_counts(counts: &EntityCounts, labels: &[String], n_docs: usize) -> Self {
        let mut per_type = BTreeMap::new();
        for l in labels.iter().chain(counts.per_type.keys()) {
            let c = counts.per_type.get(l).copied().unwrap_or_default();
            let prf = c.prf();
            per_type.insert(
                l.clone(),
                TypeMetrics {
                    p: prf.p,
                    r: prf.r,
                    f1: prf.f1,
                    support: c.tp + c.fn_,
                },
            );
        }
        Self {
            micro: counts.micro.prf(),
            per_type,
            n_docs,
        }
    }
}

/// Micro metrics over `(pred, gold)` pairs, one per document.
pub fn score_corpus(pairs: &[(Vec<Entity>, Vec<Entity>)], labels: &[String]) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::validation("cannot evaluate an empty test set"));
    }
    let mut total = EntityCounts::default();
    for (p, g) in pairs {
        total.merge(&entity_counts(p, g));
    }
    Ok(MetricsReport::from_counts(&total, labels, pairs.len()))
}

/// Predicts on each document's original image and scores against its gold entities.
pub fn evaluate<T: Scalar>(model: &Model<T>, docs: &[Document]) -> Result<MetricsReport> {
    if docs.is_empty() {
        return Err(Error::validation("cannot evaluate an empty test set"));
    }
    let refs: Vec<&Document> = docs.iter().collect();
    let preds = predict(model, &refs)?;
    let pairs: Vec<_> = preds.into_iter().zip(docs).map(|(p, d)| (p.entities, d.gold_entities())).collect();
    score_corpus(&pairs, model.labels.names())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(l: &str, s: usize, t: usize) -> Entity {
        Entity::new(l, s, t)
    }

    #[test]
    fn half_recall() {
        let (m, c) = entity_prf(&[e("QUESTION", 0, 2)], &[e("QUESTION", 0, 2), e("ANSWER", 4, 5)]);
        assert_eq!((c.micro.tp, c.micro.fp, c.micro.fn_), (1, 0, 1));
        assert_eq!(m.p, 1.0);
        assert_eq!(m.r, 0.5);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_type_mismatch() {
        let g = [e("QUESTION", 0, 2), e("ANSWER", 2, 3)];
        let (m, _) = entity_prf(&g, &g);
        assert_eq!((m.p, m.r, m.f1), (1.0, 1.0, 1.0));
        let (m, c) = entity_prf(&[e("QUESTION", 0, 2)], &[e("ANSWER", 0, 2)]);
        assert_eq!(c.micro.tp, 0);
        assert_eq!(m.f1, 0.0);
    }

    #[test]
    fn zero_denominators() {
        let (m, _) = entity_prf(&[], &[e("ANSWER", 0, 1)]);
        assert_eq!((m.p, m.r, m.f1), (0.0, 0.0, 0.0));
        let (m, _) = entity_prf(&[e("ANSWER", 0, 1)], &[]);
        assert_eq!((m.p, m.r, m.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn supports_and_empty_corpus() {
        let labels = vec!["QUESTION".to_string(), "ANSWER".to_string(), "HEADER".to_string()];
        let pairs = vec![
            (vec![e("QUESTION", 0, 1)], vec![e("QUESTION", 0, 1), e("ANSWER", 1, 2)]),
            (vec![], vec![e("HEADER", 0, 3)]),
        ];
        let r = score_corpus(&pairs, &labels).unwrap();
        assert_eq!(r.per_type.values().map(|t| t.support).sum::<usize>(), 3);
        assert_eq!(r.per_type["HEADER"].support, 1);
        assert!(score_corpus(&[], &labels).is_err());
    }
}
