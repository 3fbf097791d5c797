//! Supervision and consistency losses over per-token tag distributions.
//!
//! The row kernels are shared by the value-only functions below and by the
//! differentiable loss nodes of the computation graph.

use serde::{Deserialize, Serialize};

use crate::backbone::{Scalar, TokenDistributions};
use crate::document::TagSequence;
use crate::error::{Error, Result};

/// Floor applied inside logarithms of the KL family.
pub const LOG_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DivergenceKind {
    /// `(KL(p||q) + KL(q||p)) / 2`
    #[serde(rename = "KL", alias = "kl")]
    Kl,
    /// `KL(p||q)` with `p` the standard flow.
    #[serde(rename = "KL_FORWARD", alias = "kl_forward")]
    KlForward,
    /// `KL(q||p)`
    #[serde(rename = "KL_REVERSE", alias = "kl_reverse")]
    KlReverse,
    #[serde(rename = "JS", alias = "js")]
    Js,
}

impl DivergenceKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DivergenceKind::Kl => "KL",
            DivergenceKind::KlForward => "KL_FORWARD",
            DivergenceKind::KlReverse => "KL_REVERSE",
            DivergenceKind::Js => "JS",
        }
    }
}

#[inline]
fn flog<T: Scalar>(x: T) -> T {
    x.max(T::lit(LOG_FLOOR)).ln()
}

/// `KL(p||q)` for one row.
pub fn kl_row<T: Scalar>(p: &[T], q: &[T]) -> T {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > T::zero())
        .map(|(&pi, &qi)| pi * (flog(pi) - flog(qi)))
        .sum()
}

/// Adds `scale * dKL(p||q)/dp` to `gp` and `scale * dKL(p||q)/dq` to `gq`.
fn kl_row_grad<T: Scalar>(p: &[T], q: &[T], scale: T, gp: &mut [T], gq: &mut [T]) {
    let eps = T::lit(LOG_FLOOR);
    for i in 0..p.len() {
        let (pi, qi) = (p[i], q[i]);
        if pi > T::zero() {
            let mut d = flog(pi) - flog(qi);
            if pi > eps {
                d += T::one();
            }
            gp[i] += scale * d;
            if qi > eps {
                gq[i] -= scale * pi / qi;
            }
        }
    }
}

/// Jensen-Shannon divergence of one row, natural log.
pub fn js_row<T: Scalar>(p: &[T], q: &[T]) -> T {
    let half = T::lit(0.5);
    let mut s = T::zero();
    for (&pi, &qi) in p.iter().zip(q) {
        let m = (pi + qi) * half;
        if pi > T::zero() {
            s += half * pi * (flog(pi) - flog(m));
        }
        if qi > T::zero() {
            s += half * qi * (flog(qi) - flog(m));
        }
    }
    s
}

fn js_row_grad<T: Scalar>(p: &[T], q: &[T], scale: T, gp: &mut [T], gq: &mut [T]) {
    let half = T::lit(0.5);
    for i in 0..p.len() {
        let m = (p[i] + q[i]) * half;
        let lm = flog(m);
        gp[i] += scale * half * (flog(p[i]) - lm);
        gq[i] += scale * half * (flog(q[i]) - lm);
    }
}

pub fn divergence_row<T: Scalar>(kind: DivergenceKind, p: &[T], q: &[T]) -> T {
    let half = T::lit(0.5);
    match kind {
        DivergenceKind::Kl => half * (kl_row(p, q) + kl_row(q, p)),
        DivergenceKind::KlForward => kl_row(p, q),
        DivergenceKind::KlReverse => kl_row(q, p),
        DivergenceKind::Js => js_row(p, q),
    }
}

/// Accumulates `scale * dD/dp` and `scale * dD/dq` for one row.
pub fn divergence_row_grad<T: Scalar>(kind: DivergenceKind, p: &[T], q: &[T], scale: T, gp: &mut [T], gq: &mut [T]) {
    let half = T::lit(0.5);
    match kind {
        DivergenceKind::Kl => {
            kl_row_grad(p, q, scale * half, gp, gq);
            kl_row_grad(q, p, scale * half, gq, gp);
        }
        DivergenceKind::KlForward => kl_row_grad(p, q, scale, gp, gq),
        DivergenceKind::KlReverse => kl_row_grad(q, p, scale, gq, gp),
        DivergenceKind::Js => js_row_grad(p, q, scale, gp, gq),
    }
}

fn check_shapes(a: &TokenDistributions, b: &TokenDistributions, mask: &[bool]) -> Result<()> {
    if a.probs.len() != b.probs.len() || a.n_tags != b.n_tags || mask.len() * a.n_tags != a.probs.len() {
        return Err(Error::Shape(format!(
            "distributions {}x{} vs {}x{} with mask of {}",
            a.probs.len() / a.n_tags.max(1),
            a.n_tags,
            b.probs.len() / b.n_tags.max(1),
            b.n_tags,
            mask.len()
        )));
    }
    Ok(())
}

fn masked_mean(
    a: &TokenDistributions,
    b: &TokenDistributions,
    mask: &[bool],
    f: impl Fn(&[f64], &[f64]) -> f64,
) -> Result<f64> {
    check_shapes(a, b, mask)?;
    let t = a.n_tags;
    let (mut sum, mut n) = (0.0, 0usize);
    for (i, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        sum += f(&a.probs[i * t..(i + 1) * t], &b.probs[i * t..(i + 1) * t]);
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Mean over real tokens of `-ln p(gold)`. `gold` is flattened like the mask.
pub fn cross_entropy(pred: &TokenDistributions, gold: &[usize], mask: &[bool]) -> Result<f64> {
    let t = pred.n_tags;
    if mask.len() * t != pred.probs.len() || gold.len() != mask.len() {
        return Err(Error::Shape(format!(
            "{} probabilities for {} tags, {} gold tags, mask of {}",
            pred.probs.len(),
            t,
            gold.len(),
            mask.len()
        )));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for (i, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        let g = gold[i];
        if g >= t {
            return Err(Error::Shape(format!("gold tag index {g} out of {t}")));
        }
        sum -= pred.probs[i * t + g].ln();
        n += 1;
    }
    if n == 0 {
        return Err(Error::validation("cross entropy over zero real tokens"));
    }
    Ok(sum / n as f64)
}

/// Cross entropy against gold tag sequences given per sequence.
pub fn cross_entropy_tags(
    pred: &TokenDistributions,
    gold: &[TagSequence],
    tagset: &crate::document::TagSet,
    mask: &[bool],
) -> Result<f64> {
    let mut flat = vec![0usize; mask.len()];
    for (b, seq) in gold.iter().enumerate() {
        for (i, tag) in seq.tags.iter().enumerate() {
            let idx = tagset
                .index_of(tag)
                .ok_or_else(|| Error::validation(format!("tag {tag} not in tag set")))?;
            flat[b * pred.max_len + i] = idx;
        }
    }
    cross_entropy(pred, &flat, mask)
}

/// Symmetrized KL, mean over real tokens.
pub fn kl_divergence(p: &TokenDistributions, q: &TokenDistributions, mask: &[bool]) -> Result<f64> {
    masked_mean(p, q, mask, |a, b| divergence_row(DivergenceKind::Kl, a, b))
}

pub fn js_divergence(p: &TokenDistributions, q: &TokenDistributions, mask: &[bool]) -> Result<f64> {
    masked_mean(p, q, mask, |a, b| js_row(a, b))
}

pub fn consistency_loss(
    p: &TokenDistributions,
    q: &TokenDistributions,
    kind: DivergenceKind,
    mask: &[bool],
) -> Result<f64> {
    masked_mean(p, q, mask, |a, b| divergence_row(kind, a, b))
}
