use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::params::{PEER_ID_BASE, VE_BACKBONE_ID_BASE};
use crate::backbone::{
    build_flow, init_params, Dropout, Flow, Gradients, Graph, Model, ModelConfig, ModelParams, NodeId,
    OuterEncoderParams, PreparedDoc, Scalar, TokenBatch, Vocab,
};
use crate::document::{Document, LabelSet, TagSet};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::paint::{paint_document, ColorScheme};

use super::optim::Adam;
use super::{Mode, TrainConfig};

const PEER_SEED_SALT: u64 = 0x6a09_e667_f3bc_c908;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Dropout stream for one flow (`flow` 0 or 1, 2 for shuffling) of one step.
pub fn dropout_seed(seed: u64, step: u64, flow: u64) -> u64 {
    mix(mix(mix(seed) ^ step) ^ flow)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    #[serde(rename = "L_sup")]
    pub l_sup: f64,
    #[serde(rename = "L_cons")]
    pub l_cons: f64,
    #[serde(rename = "L_final")]
    pub l_final: f64,
    /// Consistency weight applied in this step.
    pub lambda: f64,
    pub grad_norm: f64,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    #[serde(rename = "L_sup")]
    pub l_sup: f64,
    #[serde(rename = "L_cons")]
    pub l_cons: f64,
    #[serde(rename = "L_final")]
    pub l_final: f64,
    pub dev_precision: Option<f64>,
    pub dev_recall: Option<f64>,
    pub dev_f1: Option<f64>,
    /// Wall-clock seconds; left out of the serialized log so reruns are byte-identical.
    #[serde(skip)]
    pub wall_s: f64,
}

/// Fills vocabulary size, tag count and the dropout override into `model_cfg`.
pub fn resolve_model_config(model_cfg: &ModelConfig, vocab: &Vocab, labels: &LabelSet, cfg: &TrainConfig) -> Result<ModelConfig> {
    let mut mc = model_cfg.clone();
    mc.vocab_size = vocab.len();
    mc.n_tags = TagSet::new(labels).len();
    if let Some(p) = cfg.dropout_p {
        mc.dropout_p = p;
    }
    mc.validate()?;
    Ok(mc)
}

/// Parameters and optimizer state of a training run.
#[derive(Debug, Clone)]
pub struct Trainer<T: Scalar> {
    pub cfg: TrainConfig,
    pub model_cfg: ModelConfig,
    pub params: ModelParams<T>,
    pub outer: OuterEncoderParams<T>,
    /// Separate vision-enhanced backbone when weights are not shared.
    pub ve_params: Option<ModelParams<T>>,
    /// Second network of mutual learning.
    pub peer: Option<ModelParams<T>>,
    opt: Adam<T>,
    peer_opt: Adam<T>,
    step: u64,
}

impl<T: Scalar> Trainer<T> {
    /// `model_cfg` must already carry vocabulary size and tag count.
    pub fn new(model_cfg: ModelConfig, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        model_cfg.validate()?;
        let (params, outer) = init_params::<T>(&model_cfg, cfg.seed);
        let ve_params = (cfg.needs_ve() && !cfg.share_weights).then(|| params.relabeled(VE_BACKBONE_ID_BASE, "ve_backbone"));
        let peer = (cfg.mode == Mode::Mutual).then(|| {
            init_params::<T>(&model_cfg, cfg.seed ^ PEER_SEED_SALT).0.relabeled(PEER_ID_BASE, "peer")
        });
        Ok(Self {
            opt: Adam::new(cfg.lr, cfg.adam_betas),
            peer_opt: Adam::new(cfg.lr, cfg.adam_betas),
            cfg,
            model_cfg,
            params,
            outer,
            ve_params,
            peer,
            step: 0,
        })
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    fn dropout(&self, flow: u64) -> Dropout {
        Dropout::new(dropout_seed(self.cfg.seed, self.step, flow), self.model_cfg.dropout_p)
    }

    fn check(&self, g: &Graph<T>, loss: NodeId, grads: &Gradients<T>) -> Result<()> {
        if !g.scalar(loss).is_finite() {
            return Err(Error::NonFinite {
                what: format!("training loss at step {}", self.step),
            });
        }
        if let Some(name) = grads.first_non_finite() {
            return Err(Error::NonFinite {
                what: format!("gradient of {name} at step {}", self.step),
            });
        }
        Ok(())
    }

    /// One optimizer step. `ve` holds the painted-crop batch and is required when the
    /// vision-enhanced flow runs; it must share tokens, boxes and gold tags with `sl`.
    pub fn train_step(&mut self, sl: &TokenBatch, ve: Option<&TokenBatch>) -> Result<StepReport> {
        if let Some(v) = ve {
            if v.token_ids != sl.token_ids || v.layout != sl.layout || v.mask != sl.mask || v.gold != sl.gold {
                return Err(Error::Shape("flow batches differ in more than their crops".into()));
            }
        }
        let report = match self.cfg.mode {
            Mode::Mutual => self.mutual_step(sl)?,
            _ => self.joint_step(sl, ve)?,
        };
        self.step += 1;
        Ok(report)
    }

    fn joint_step(&mut self, sl: &TokenBatch, ve: Option<&TokenBatch>) -> Result<StepReport> {
        let mc = &self.model_cfg;
        let lambda = self.cfg.effective_lambda();
        let mut g = Graph::new();
        let mut d0 = self.dropout(0);
        let a = build_flow(&mut g, mc, &self.params, None, sl, Flow::Sl, Some(&mut d0))?;
        let ce_a = g.cross_entropy(a.logits, a.gold);
        let (l_sup, l_cons, l_final) = if self.cfg.baseline {
            (ce_a, None, ce_a)
        } else {
            let mut d1 = self.dropout(1);
            let b = if self.cfg.mode == Mode::Rdrop {
                build_flow(&mut g, mc, &self.params, None, sl, Flow::Sl, Some(&mut d1))?
            } else {
                let ve = ve.ok_or_else(|| Error::validation("vision-enhanced flow needs a painted batch"))?;
                let p = self.ve_params.as_ref().unwrap_or(&self.params);
                build_flow(&mut g, mc, p, Some(&self.outer), ve, Flow::Ve, Some(&mut d1))?
            };
            let ce_b = g.cross_entropy(b.logits, b.gold);
            let one = T::one();
            let l_sup = g.weighted_sum(vec![(ce_a, one), (ce_b, one)]);
            let l_cons = g.divergence(a.logits, b.logits, self.cfg.divergence);
            let l_final = if lambda == 0.0 {
                l_sup
            } else {
                g.weighted_sum(vec![(l_sup, one), (l_cons, T::lit(lambda))])
            };
            (l_sup, Some(l_cons), l_final)
        };
        let grads = g.backward(l_final);
        self.check(&g, l_final, &grads)?;
        let mut all = self.params.params_mut();
        all.extend(self.outer.params_mut());
        if let Some(v) = self.ve_params.as_mut() {
            all.extend(v.params_mut());
        }
        self.opt.step(all, &grads);
        Ok(StepReport {
            step: self.step,
            l_sup: g.scalar(l_sup).to_f64_lossless(),
            l_cons: l_cons.map_or(0.0, |c| g.scalar(c).to_f64_lossless()),
            l_final: g.scalar(l_final).to_f64_lossless(),
            lambda,
            grad_norm: grads.global_norm(),
        })
    }

    fn mutual_step(&mut self, sl: &TokenBatch) -> Result<StepReport> {
        let mc = self.model_cfg.clone();
        let lambda = self.cfg.effective_lambda();
        let kind = self.cfg.divergence;
        let peer = self.peer.as_ref().expect("mutual mode has a peer");

        // Main network against the peer's detached prediction.
        let mut g = Graph::new();
        let a = build_flow(&mut g, &mc, &self.params, None, sl, Flow::Sl, Some(&mut self.dropout(0)))?;
        let b = build_flow(&mut g, &mc, peer, None, sl, Flow::Sl, Some(&mut self.dropout(1)))?;
        let target = g.detach(b.logits);
        let ce = g.cross_entropy(a.logits, a.gold);
        let cons = g.divergence(a.logits, target, kind);
        let loss = g.weighted_sum(vec![(ce, T::one()), (cons, T::lit(lambda))]);
        let grads = g.backward(loss);
        self.check(&g, loss, &grads)?;
        self.opt.step(self.params.params_mut(), &grads);
        let report = StepReport {
            step: self.step,
            l_sup: g.scalar(ce).to_f64_lossless(),
            l_cons: g.scalar(cons).to_f64_lossless(),
            l_final: g.scalar(loss).to_f64_lossless(),
            lambda,
            grad_norm: grads.global_norm(),
        };

        // Peer against the updated main network.
        let mut g = Graph::new();
        let peer = self.peer.as_ref().expect("mutual mode has a peer");
        let b = build_flow(&mut g, &mc, peer, None, sl, Flow::Sl, Some(&mut self.dropout(2)))?;
        let a = build_flow(&mut g, &mc, &self.params, None, sl, Flow::Sl, Some(&mut self.dropout(3)))?;
        let target = g.detach(a.logits);
        let ce = g.cross_entropy(b.logits, b.gold);
        let cons = g.divergence(b.logits, target, kind);
        let loss = g.weighted_sum(vec![(ce, T::one()), (cons, T::lit(lambda))]);
        let grads = g.backward(loss);
        self.check(&g, loss, &grads)?;
        let peer = self.peer.as_mut().expect("mutual mode has a peer");
        self.peer_opt.step(peer.params_mut(), &grads);
        Ok(report)
    }

    /// The deployable standard-flow model, optionally carrying the outer encoder.
    pub fn model(&self, vocab: &Vocab, labels: &LabelSet, with_outer: bool) -> Model<T> {
        Model {
            config: self.model_cfg.clone(),
            vocab: vocab.clone(),
            labels: labels.clone(),
            params: self.params.clone(),
            outer: with_outer.then(|| self.outer.clone()),
        }
    }
}

impl TrainConfig {
    /// Whether steps run the painted-page flow.
    pub fn needs_ve(&self) -> bool {
        !self.baseline && matches!(self.mode, Mode::Vancl | Mode::None)
    }
}

pub struct TrainOutput<T: Scalar> {
    /// Trained model; `outer` holds the vision-enhanced encoder for analysis.
    pub model: Model<T>,
    pub log: Vec<EpochLog>,
    pub steps: Vec<StepReport>,
}

/// Inputs for both flows, in training order.
pub fn prepare_pairs(
    docs: &[Document],
    vocab: &Vocab,
    labels: &LabelSet,
    mc: &ModelConfig,
    scheme: Option<&ColorScheme>,
) -> Result<Vec<(PreparedDoc, Option<PreparedDoc>)>> {
    let tagset = TagSet::new(labels);
    docs.par_iter()
        .map(|d| {
            d.validate_labels(labels)?;
            let sl = PreparedDoc::new(d, &d.image, vocab, &tagset, mc.roi_patch, mc.layout_buckets, mc.max_seq_len)?;
            let ve = match scheme {
                Some(s) => Some(sl.with_image(d, &paint_document(d, s)?.image)),
                None => None,
            };
            Ok((sl, ve))
        })
        .collect()
}

/// Full training run with seeded shuffling. The model is evaluated on `dev` after each epoch
/// when `dev` is non-empty.
pub fn train<T: Scalar>(
    train_docs: &[Document],
    dev: &[Document],
    labels: &LabelSet,
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
) -> Result<TrainOutput<T>> {
    cfg.validate()?;
    if train_docs.is_empty() {
        return Err(Error::validation("training split is empty"));
    }
    let vocab = Vocab::build(train_docs);
    let mc = resolve_model_config(model_cfg, &vocab, labels, cfg)?;
    let scheme = if cfg.needs_ve() {
        if cfg.use_paint {
            let s = ColorScheme::resolve(&cfg.scheme)?;
            s.covers(labels)?;
            Some(s)
        } else {
            Some(ColorScheme::noop(labels))
        }
    } else {
        None
    };
    let pairs = prepare_pairs(train_docs, &vocab, labels, &mc, scheme.as_ref())?;
    let mut trainer = Trainer::<T>::new(mc, cfg.clone())?;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut steps = Vec::new();
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed(cfg.seed, epoch as u64, 2));
        order.shuffle(&mut rng);
        let mut sums = (0.0, 0.0, 0.0);
        let mut n = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let sl: Vec<&PreparedDoc> = chunk.iter().map(|&i| &pairs[i].0).collect();
            let sl = TokenBatch::from_prepared(&sl)?;
            let ve = match chunk.iter().map(|&i| pairs[i].1.as_ref()).collect::<Option<Vec<_>>>() {
                Some(v) if trainer.cfg.needs_ve() => Some(TokenBatch::from_prepared(&v)?),
                _ => None,
            };
            let r = trainer.train_step(&sl, ve.as_ref())?;
            sums.0 += r.l_sup;
            sums.1 += r.l_cons;
            sums.2 += r.l_final;
            n += 1;
            steps.push(r);
        }
        let (mut p, mut rc, mut f1) = (None, None, None);
        if !dev.is_empty() {
            let m = evaluate(&trainer.model(&vocab, labels, false), dev)?;
            (p, rc, f1) = (Some(m.micro.p), Some(m.micro.r), Some(m.micro.f1));
        }
        let n = n as f64;
        log.push(EpochLog {
            epoch: epoch + 1,
            l_sup: sums.0 / n,
            l_cons: sums.1 / n,
            l_final: sums.2 / n,
            dev_precision: p,
            dev_recall: rc,
            dev_f1: f1,
            wall_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainOutput {
        model: trainer.model(&vocab, labels, true),
        log,
        steps,
    })
}
