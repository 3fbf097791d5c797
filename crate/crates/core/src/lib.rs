//! Visually-asymmetric consistency learning for entity recognition on form documents.
//!
//! A small layout-aware tagger is trained with two flows: one reads the original page,
//! the other reads a copy whose text boxes are painted by entity type. A divergence
//! between the two flows' tag distributions regularizes the first flow, which is the
//! only one kept for inference.

pub mod backbone;
pub mod cli;
pub mod decode;
pub mod document;
pub mod error;
pub mod eval;
pub mod image;
pub mod paint;
pub mod synthgen;
pub mod vancl;

pub use error::{Error, Result};

/// Hex sha256 of a value's JSON serialization.
pub fn digest_json<T: serde::Serialize>(value: &T) -> String {
    use sha2::{Digest, Sha256};
    let bytes = serde_json::to_vec(value).expect("serializable value");
    backbone::model::hex(&Sha256::digest(bytes))
}
