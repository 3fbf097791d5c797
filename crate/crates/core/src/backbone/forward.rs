use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::batch::TokenBatch;
use super::config::{Fusion, ModelConfig, VeVisual};
use super::graph::{AttnBias, ConvGeom, Graph, NodeId};
use super::params::{CnnParams, ModelParams, OuterEncoderParams, Param, REL_MAX};
use super::tensor::{log_sum_exp, Scalar, Tensor};

/// Which visual input a forward pass reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Flow {
    /// Standard learning: original page, inner encoder.
    Sl,
    /// Vision-enhanced: painted page, outer encoder.
    Ve,
}

/// Per-token tag distributions, padded to `[batch, max_len, n_tags]`. Padded rows are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistributions {
    pub batch: usize,
    pub max_len: usize,
    pub n_tags: usize,
    pub probs: Vec<f64>,
    /// Log-probabilities, used as emission scores by the decoder.
    pub scores: Vec<f64>,
    pub mask: Vec<bool>,
}

impl TokenDistributions {
    /// A single sequence whose rows are already probabilities.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let n_tags = rows.first().map_or(0, |r| r.len());
        let probs: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self {
            batch: 1,
            max_len: rows.len(),
            n_tags,
            scores: probs.iter().map(|p| p.max(f64::MIN_POSITIVE).ln()).collect(),
            probs,
            mask: vec![true; rows.len()],
        }
    }

    /// Softmax of compact logits `[sum(lengths), n_tags]` scattered into padded rows.
    pub fn from_logits<T: Scalar>(logits: &Tensor<T>, lengths: &[usize], max_len: usize) -> Self {
        let t = logits.cols();
        let n = lengths.len() * max_len;
        let mut out = Self {
            batch: lengths.len(),
            max_len,
            n_tags: t,
            probs: vec![0.0; n * t],
            scores: vec![0.0; n * t],
            mask: vec![false; n],
        };
        let mut r = 0;
        for (b, &len) in lengths.iter().enumerate() {
            for i in 0..len {
                let row: Vec<f64> = logits.row(r).iter().map(|v| v.to_f64_lossless()).collect();
                let lse = log_sum_exp(&row);
                let o = (b * max_len + i) * t;
                for (k, &v) in row.iter().enumerate() {
                    out.scores[o + k] = v - lse;
                    out.probs[o + k] = (v - lse).exp();
                }
                out.mask[b * max_len + i] = true;
                r += 1;
            }
        }
        out
    }

    /// Probabilities of token `i` of sequence `b`.
    pub fn row(&self, b: usize, i: usize) -> &[f64] {
        let o = (b * self.max_len + i) * self.n_tags;
        &self.probs[o..o + self.n_tags]
    }

    pub fn score_row(&self, b: usize, i: usize) -> &[f64] {
        let o = (b * self.max_len + i) * self.n_tags;
        &self.scores[o..o + self.n_tags]
    }

    pub fn len_of(&self, b: usize) -> usize {
        self.mask[b * self.max_len..(b + 1) * self.max_len].iter().filter(|&&m| m).count()
    }
}

/// Seeded inverted dropout.
#[derive(Debug, Clone)]
pub struct Dropout {
    rng: ChaCha8Rng,
    p: f64,
}

impl Dropout {
    pub fn new(seed: u64, p: f64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            p,
        }
    }

    fn apply<T: Scalar>(&mut self, g: &mut Graph<T>, x: NodeId) -> NodeId {
        if self.p <= 0.0 {
            return x;
        }
        let keep = T::lit(1.0 / (1.0 - self.p));
        let mask = (0..g.value(x).len())
            .map(|_| if self.rng.gen::<f64>() < self.p { T::zero() } else { keep })
            .collect();
        g.dropout(x, mask)
    }
}

/// Graph nodes of one flow over compacted real tokens.
#[derive(Debug, Clone)]
pub struct FlowNodes {
    /// `[n_real, d_model]` final hidden states.
    pub hidden: NodeId,
    /// `[n_real, n_tags]`.
    pub logits: NodeId,
    pub lengths: Vec<usize>,
    /// Gold tag index per real token.
    pub gold: Vec<usize>,
}

fn check_batch<T: Scalar>(cfg: &ModelConfig, params: &ModelParams<T>, batch: &TokenBatch) -> Result<Vec<usize>> {
    let lengths = batch.lengths()?;
    if batch.patch != cfg.roi_patch {
        return Err(Error::Shape(format!("batch patch {:?} vs model {:?}", batch.patch, cfg.roi_patch)));
    }
    let vocab = params.tok_emb.value.rows();
    let per_seg = cfg.roi_patch.0 * cfg.roi_patch.1 * 3;
    for (b, &len) in lengths.iter().enumerate() {
        if len > cfg.max_seq_len || len > params.pos_emb.value.rows() {
            return Err(Error::Shape(format!("sequence {b} has {len} tokens, limit {}", cfg.max_seq_len)));
        }
        if batch.crops[b].len() != batch.n_segments[b] * per_seg {
            return Err(Error::Shape(format!(
                "sequence {b}: {} crop values for {} segments",
                batch.crops[b].len(),
                batch.n_segments[b]
            )));
        }
        for i in 0..len {
            let k = b * batch.max_len + i;
            if batch.token_ids[k] >= vocab {
                return Err(Error::Shape(format!("token id {} outside vocabulary of {vocab}", batch.token_ids[k])));
            }
            if batch.seg_of_token[k] >= batch.n_segments[b] {
                return Err(Error::Shape(format!("token {i} of sequence {b} points past its segments")));
            }
            if batch.layout[k].iter().any(|&v| v >= cfg.layout_buckets) {
                return Err(Error::Shape(format!("layout bucket out of range at token {i} of sequence {b}")));
            }
        }
    }
    Ok(lengths)
}

/// Bias rows for every query/key pair: token offset, x1 bucket offset, y1 bucket offset.
fn relative_indices(ranges: &[(usize, usize)], x1: &[usize], y1: &[usize]) -> Vec<usize> {
    let span = 2 * REL_MAX + 1;
    let m = REL_MAX as i64;
    let rel = |a: usize, b: usize| ((b as i64 - a as i64).clamp(-m, m) + m) as usize;
    let mut out = Vec::new();
    for &(s, e) in ranges {
        for i in s..e {
            for j in s..e {
                out.extend([rel(i, j), span + rel(x1[i], x1[j]), 2 * span + rel(y1[i], y1[j])]);
            }
        }
    }
    out
}

fn encode<T: Scalar>(g: &mut Graph<T>, cfg: &ModelConfig, cnn: &CnnParams<T>, crops: NodeId, n: usize) -> NodeId {
    let (h, w) = cfg.roi_patch;
    let mut x = crops;
    let mut c = 3;
    for (wt, bias) in &cnn.convs {
        let cols = g.im2col3x3(x, ConvGeom { n, h, w, c });
        let (wn, bn) = (g.param(wt), g.param(bias));
        let y = g.matmul(cols, wn);
        let y = g.add_bias(y, bn);
        x = g.gelu(y);
        c = wt.value.cols();
    }
    let (pooled, hw) = if cfg.pools() {
        (g.avg_pool2(x, ConvGeom { n, h, w, c }), (h / 2) * (w / 2))
    } else {
        (x, h * w)
    };
    let flat = g.reshape(pooled, &[n, hw * c]);
    let (pw, pb) = (g.param(&cnn.proj_w), g.param(&cnn.proj_b));
    let y = g.matmul(flat, pw);
    g.add_bias(y, pb)
}

/// Builds one flow into `g`. The SL flow never touches `outer`.
pub fn build_flow<T: Scalar>(
    g: &mut Graph<T>,
    cfg: &ModelConfig,
    params: &ModelParams<T>,
    outer: Option<&OuterEncoderParams<T>>,
    batch: &TokenBatch,
    flow: Flow,
    mut dropout: Option<&mut Dropout>,
) -> Result<FlowNodes> {
    let lengths = check_batch(cfg, params, batch)?;
    let mut ranges = Vec::with_capacity(lengths.len());
    let (mut tok, mut pos, mut seg, mut gold) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut layout: [Vec<usize>; 6] = Default::default();
    let mut seg_base = 0;
    for (b, &len) in lengths.iter().enumerate() {
        ranges.push((tok.len(), tok.len() + len));
        for i in 0..len {
            let k = b * batch.max_len + i;
            tok.push(batch.token_ids[k]);
            pos.push(i);
            seg.push(seg_base + batch.seg_of_token[k]);
            gold.push(batch.gold[k]);
            for (f, col) in layout.iter_mut().enumerate() {
                col.push(batch.layout[k][f]);
            }
        }
        seg_base += batch.n_segments[b];
    }

    // Visual features per segment, then per token.
    let (ph, pw) = cfg.roi_patch;
    let crop_data: Vec<T> = batch.crops.iter().flatten().map(|&v| T::lit(v as f64)).collect();
    let crops = g.constant(Tensor::from_vec(&[seg_base * ph * pw, 3], crop_data));
    let outer_cnn = match (flow, cfg.outer_encoder.is_some()) {
        (Flow::Ve, true) => Some(
            outer
                .and_then(|o| o.cnn.as_ref())
                .ok_or_else(|| Error::Config("vision-enhanced flow needs outer encoder weights".into()))?,
        ),
        _ => None,
    };
    let seg_vis = match (outer_cnn, cfg.ve_visual) {
        (None, _) => encode(g, cfg, &params.inner, crops, seg_base),
        (Some(o), VeVisual::Replace) => encode(g, cfg, o, crops, seg_base),
        (Some(o), VeVisual::Augment) => {
            let a = encode(g, cfg, &params.inner, crops, seg_base);
            let b = encode(g, cfg, o, crops, seg_base);
            g.add(a, b)
        }
    };
    let visual = g.gather(seg_vis, seg);

    let (layout_x1, layout_y1) = (layout[0].clone(), layout[1].clone());
    let te = g.param(&params.tok_emb);
    let pe = g.param(&params.pos_emb);
    let mut parts = vec![g.gather(te, tok), g.gather(pe, pos)];
    for (table, idx) in params.layout_emb.iter().zip(layout) {
        let t = g.param(table);
        parts.push(g.gather(t, idx));
    }
    if cfg.fusion == Fusion::Early {
        parts.push(visual);
    }
    let emb = g.add_all(&parts);
    let (lg, lb) = (g.param(&params.emb_ln_g), g.param(&params.emb_ln_b));
    let mut x = g.layer_norm(emb, lg, lb);
    if let Some(d) = dropout.as_deref_mut() {
        x = d.apply(g, x);
    }

    let rel_idx = relative_indices(&ranges, &layout_x1, &layout_y1);
    for layer in &params.layers {
        let lin = |g: &mut Graph<T>, x: NodeId, w: &Param<T>, b: &Param<T>| {
            let (wn, bn) = (g.param(w), g.param(b));
            let y = g.matmul(x, wn);
            g.add_bias(y, bn)
        };
        let q = lin(g, x, &layer.wq, &layer.bq);
        let k = lin(g, x, &layer.wk, &layer.bk);
        let v = lin(g, x, &layer.wv, &layer.bv);
        let bias = AttnBias {
            table: g.param(&layer.rel_bias),
            idx: rel_idx.clone(),
            per_pair: 3,
        };
        let a = g.attention(q, k, v, ranges.clone(), cfg.n_heads, Some(bias));
        let mut o = lin(g, a, &layer.wo, &layer.bo);
        if let Some(d) = dropout.as_deref_mut() {
            o = d.apply(g, o);
        }
        let r = g.add(x, o);
        let (g1, b1) = (g.param(&layer.ln1_g), g.param(&layer.ln1_b));
        x = g.layer_norm(r, g1, b1);
        let f = lin(g, x, &layer.w1, &layer.b1);
        let f = g.gelu(f);
        let mut f = lin(g, f, &layer.w2, &layer.b2);
        if let Some(d) = dropout.as_deref_mut() {
            f = d.apply(g, f);
        }
        let r = g.add(x, f);
        let (g2, b2) = (g.param(&layer.ln2_g), g.param(&layer.ln2_b));
        x = g.layer_norm(r, g2, b2);
    }
    let hidden = if cfg.fusion == Fusion::Late { g.add(x, visual) } else { x };
    let (cw, cb) = (g.param(&params.cls_w), g.param(&params.cls_b));
    let logits = g.matmul(hidden, cw);
    let logits = g.add_bias(logits, cb);
    Ok(FlowNodes {
        hidden,
        logits,
        lengths,
        gold,
    })
}

/// Tag distributions for `batch`. With `train`, dropout is drawn from `seed`.
pub fn forward<T: Scalar>(
    cfg: &ModelConfig,
    params: &ModelParams<T>,
    outer: Option<&OuterEncoderParams<T>>,
    batch: &TokenBatch,
    flow: Flow,
    train: bool,
    seed: u64,
) -> Result<TokenDistributions> {
    Ok(forward_hidden(cfg, params, outer, batch, flow, train, seed)?.0)
}

/// Like [`forward`], also returning each sequence's final hidden states `[len][d_model]`.
pub fn forward_hidden<T: Scalar>(
    cfg: &ModelConfig,
    params: &ModelParams<T>,
    outer: Option<&OuterEncoderParams<T>>,
    batch: &TokenBatch,
    flow: Flow,
    train: bool,
    seed: u64,
) -> Result<(TokenDistributions, Vec<Vec<Vec<f64>>>)> {
    let mut g = Graph::new();
    let mut drop = train.then(|| Dropout::new(seed, cfg.dropout_p));
    let nodes = build_flow(&mut g, cfg, params, outer, batch, flow, drop.as_mut())?;
    let logits = g.value(nodes.logits);
    if !logits.all_finite() {
        return Err(Error::NonFinite { what: "logits".into() });
    }
    let dists = TokenDistributions::from_logits(logits, &nodes.lengths, batch.max_len);
    let h = g.value(nodes.hidden);
    let mut hidden = Vec::with_capacity(nodes.lengths.len());
    let mut r = 0;
    for &len in &nodes.lengths {
        hidden.push((r..r + len).map(|i| h.row(i).iter().map(|v| v.to_f64_lossless()).collect()).collect());
        r += len;
    }
    Ok((dists, hidden))
}
