#![allow(dead_code)]

use vancl::backbone::{CnnSpec, ModelConfig, PreparedDoc, TokenBatch, Vocab};
use vancl::document::{Document, LabelSet, TagSet};
use vancl::paint::{builtin_scheme, paint_document};
use vancl::synthgen::{generate_corpus, CorpusSplit, GenSpec};
use vancl::vancl::{resolve_model_config, TrainConfig};

pub fn small_spec(n_train: usize, n_test: usize, seed: u64) -> GenSpec {
    GenSpec {
        seed,
        n_train,
        n_test,
        segments_per_doc: 6,
        ..GenSpec::default()
    }
}

pub fn small_corpus(n_train: usize, n_test: usize, seed: u64) -> (CorpusSplit, LabelSet) {
    let spec = small_spec(n_train, n_test, seed);
    (generate_corpus(&spec).unwrap(), spec.labels)
}

/// d_model `d`, one layer, one head, 4x4 crops.
pub fn tiny_model(d: usize) -> ModelConfig {
    ModelConfig {
        d_model: d,
        n_layers: 1,
        n_heads: 1,
        ffn_dim: 2 * d,
        max_seq_len: 64,
        roi_patch: (4, 4),
        dropout_p: 0.0,
        inner_encoder: CnnSpec { depth: 1, channels: 2 },
        outer_encoder: Some(CnnSpec { depth: 2, channels: 2 }),
        ..ModelConfig::default()
    }
}

pub struct Fixture {
    pub docs: Vec<Document>,
    pub labels: LabelSet,
    pub vocab: Vocab,
    pub config: ModelConfig,
    pub sl: Vec<PreparedDoc>,
    pub ve: Vec<PreparedDoc>,
}

impl Fixture {
    pub fn new(docs: Vec<Document>, labels: LabelSet, model: &ModelConfig) -> Self {
        let vocab = Vocab::build(&docs);
        let config = resolve_model_config(model, &vocab, &labels, &TrainConfig::default()).unwrap();
        let tagset = TagSet::new(&labels);
        let scheme = builtin_scheme(1).unwrap();
        let mut sl = Vec::new();
        let mut ve = Vec::new();
        for d in &docs {
            let p = PreparedDoc::new(d, &d.image, &vocab, &tagset, config.roi_patch, config.layout_buckets, config.max_seq_len).unwrap();
            ve.push(p.with_image(d, &paint_document(d, &scheme).unwrap().image));
            sl.push(p);
        }
        Self {
            docs,
            labels,
            vocab,
            config,
            sl,
            ve,
        }
    }

    pub fn small(n_docs: usize, d: usize) -> Self {
        let (corpus, labels) = small_corpus(n_docs, 0, 7);
        Self::new(corpus.train, labels, &tiny_model(d))
    }

    pub fn sl_batch(&self) -> TokenBatch {
        TokenBatch::from_prepared(&self.sl.iter().collect::<Vec<_>>()).unwrap()
    }

    pub fn ve_batch(&self) -> TokenBatch {
        TokenBatch::from_prepared(&self.ve.iter().collect::<Vec<_>>()).unwrap()
    }
}

pub mod oracles;
pub mod reference;
