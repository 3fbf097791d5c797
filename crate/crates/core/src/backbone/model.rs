//! Deployable model and its checkpoint file.
//!
//! Layout: the 8-byte magic `VANCLCK1`, a little-endian `u64` header length, a JSON
//! header, then the raw little-endian tensor data in header order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::document::{Document, LabelSet, TagSet};
use crate::error::{Error, Result};

use super::batch::{PreparedDoc, TokenBatch};
use super::config::ModelConfig;
use super::forward::{forward_hidden, Flow, TokenDistributions};
use super::params::{init_params, ModelParams, OuterEncoderParams, Param};
use super::tensor::{Scalar, Tensor};
use super::vocab::Vocab;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VANCLCK1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    dtype: String,
    config: ModelConfig,
    labels: LabelSet,
    vocab: Vocab,
    tensors: Vec<TensorEntry>,
}

/// Trained backbone with everything needed for inference. `outer` is only kept for analysis
/// and is never used when predicting.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub labels: LabelSet,
    pub params: ModelParams<T>,
    pub outer: Option<OuterEncoderParams<T>>,
}

impl<T: Scalar> Model<T> {
    pub fn tagset(&self) -> TagSet {
        TagSet::new(&self.labels)
    }

    /// Inputs for `doc` with crops from its own (unpainted) page image.
    pub fn prepare(&self, doc: &Document) -> Result<PreparedDoc> {
        PreparedDoc::new(
            doc,
            &doc.image,
            &self.vocab,
            &self.tagset(),
            self.config.roi_patch,
            self.config.layout_buckets,
            self.config.max_seq_len,
        )
    }

    /// Evaluation-mode distributions and hidden states for a batch of documents.
    pub fn infer(&self, docs: &[&Document]) -> Result<(TokenDistributions, Vec<Vec<Vec<f64>>>)> {
        let prepared = docs.iter().map(|d| self.prepare(d)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&PreparedDoc> = prepared.iter().collect();
        let batch = TokenBatch::from_prepared(&refs)?;
        forward_hidden(&self.config, &self.params, None, &batch, Flow::Sl, false, 0)
    }

    fn tensors(&self, with_outer: bool) -> Vec<&Param<T>> {
        let mut out = self.params.params();
        if with_outer {
            if let Some(o) = &self.outer {
                out.extend(o.params());
            }
        }
        out
    }

    /// Serializes the backbone only, or also the outer encoder with `with_outer`.
    pub fn to_bytes(&self, with_outer: bool) -> Result<Vec<u8>> {
        let mut data = Vec::new();
        let mut entries = Vec::new();
        for p in self.tensors(with_outer) {
            entries.push(TensorEntry {
                name: p.name.clone(),
                shape: p.value.shape.clone(),
                offset: data.len(),
            });
            for &v in &p.value.data {
                v.write_le(&mut data);
            }
        }
        let header = Header {
            dtype: T::DTYPE.to_string(),
            config: self.config.clone(),
            labels: self.labels.clone(),
            vocab: self.vocab.clone(),
            tensors: entries,
        };
        let hjson = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + hjson.len() + data.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(hjson.len() as u64).to_le_bytes());
        out.extend_from_slice(&hjson);
        out.extend_from_slice(&data);
        Ok(out)
    }

    /// Reads a checkpoint of either dtype, converting values to `T`.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::parse("byte 0", "not a checkpoint (bad magic)"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let hend = 16usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::parse("byte 8", format!("header length {hlen} past end of file")))?;
        let header: Header =
            serde_json::from_slice(&bytes[16..hend]).map_err(|e| Error::parse("header", e.to_string()))?;
        let data = &bytes[hend..];
        let width = match header.dtype.as_str() {
            "f32" => 4,
            "f64" => 8,
            other => return Err(Error::parse("header.dtype", format!("unknown dtype {other:?}"))),
        };
        header.config.validate()?;
        let mut table: BTreeMap<&str, &TensorEntry> = BTreeMap::new();
        for e in &header.tensors {
            table.insert(e.name.as_str(), e);
        }
        let read = |p: &mut Param<T>, table: &mut BTreeMap<&str, &TensorEntry>| -> Result<()> {
            let e = table
                .remove(p.name.as_str())
                .ok_or_else(|| Error::parse("header.tensors", format!("missing tensor {}", p.name)))?;
            if e.shape != p.value.shape {
                return Err(Error::parse(
                    format!("header.tensors.{}", e.name),
                    format!("shape {:?}, expected {:?}", e.shape, p.value.shape),
                ));
            }
            let n = p.value.len();
            let end = e.offset + n * width;
            if end > data.len() {
                return Err(Error::parse(format!("header.tensors.{}", e.name), "data truncated"));
            }
            let raw = &data[e.offset..end];
            p.value = Tensor::from_vec(
                &e.shape,
                raw.chunks(width)
                    .map(|c| if width == 4 { T::lit(f32::read_le(c) as f64) } else { T::lit(f64::read_le(c)) })
                    .collect(),
            );
            Ok(())
        };
        let (mut params, mut outer) = init_params::<T>(&header.config, 0);
        for p in params.params_mut() {
            read(p, &mut table)?;
        }
        let has_outer = table.keys().any(|k| k.starts_with("outer."));
        let outer = if has_outer {
            for p in outer.params_mut() {
                read(p, &mut table)?;
            }
            Some(outer)
        } else {
            None
        };
        if let Some(extra) = table.keys().next() {
            return Err(Error::parse("header.tensors", format!("unexpected tensor {extra}")));
        }
        Ok(Self {
            config: header.config,
            vocab: header.vocab,
            labels: header.labels,
            params,
            outer,
        })
    }

    pub fn save(&self, path: &Path, with_outer: bool) -> Result<()> {
        let bytes = self.to_bytes(with_outer)?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// sha256 of the deployment checkpoint bytes.
    pub fn digest(&self) -> Result<String> {
        Ok(hex(&Sha256::digest(self.to_bytes(false)?)))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// A checkpoint loaded at its stored precision.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    F32(Model<f32>),
    F64(Model<f64>),
}

impl AnyModel {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::parse("byte 0", "not a checkpoint (bad magic)"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let header = bytes
            .get(16..16usize.saturating_add(hlen))
            .ok_or_else(|| Error::parse("byte 8", format!("header length {hlen} past end of file")))?;
        #[derive(Deserialize)]
        struct Dtype {
            dtype: String,
        }
        let d: Dtype = serde_json::from_slice(header).map_err(|e| Error::parse("header", e.to_string()))?;
        match d.dtype.as_str() {
            "f64" => Ok(AnyModel::F64(Model::from_bytes(bytes)?)),
            _ => Ok(AnyModel::F32(Model::from_bytes(bytes)?)),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Runs `$body` with `$m` bound to the concrete model inside an [`AnyModel`].
#[macro_export]
macro_rules! with_model {
    ($any:expr, $m:ident => $body:expr) => {
        match $any {
            $crate::backbone::AnyModel::F32($m) => $body,
            $crate::backbone::AnyModel::F64($m) => $body,
        }
    };
}
