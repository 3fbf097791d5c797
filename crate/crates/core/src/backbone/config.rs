use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A small convolutional visual encoder: `depth` 3x3 conv layers of `channels`
/// filters with GELU, one 2x2 average pool, then a linear map to `d_model`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CnnSpec {
    pub depth: usize,
    pub channels: usize,
}

impl CnnSpec {
    pub const fn cnn(depth: usize) -> Self {
        Self { depth, channels: 8 }
    }
}

/// Where the visual embedding joins the token stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    /// Added to the input embeddings before the transformer.
    Early,
    /// Added to the transformer output before the classifier.
    Late,
}

/// How the vision-enhanced flow builds its visual embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VeVisual {
    /// Outer encoder only.
    Replace,
    /// Inner encoder plus outer encoder, summed.
    Augment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    /// Filled from the training vocabulary when left at 0.
    pub vocab_size: usize,
    /// Filled from the label set when left at 0.
    pub n_tags: usize,
    pub max_seq_len: usize,
    pub layout_buckets: usize,
    /// ROI patch size `(height, width)` in pixels.
    pub roi_patch: (usize, usize),
    pub dropout_p: f64,
    pub inner_encoder: CnnSpec,
    /// `None` makes the vision-enhanced flow reuse the inner encoder.
    pub outer_encoder: Option<CnnSpec>,
    pub fusion: Fusion,
    pub ve_visual: VeVisual,
    pub precision: Precision,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            ffn_dim: 128,
            vocab_size: 0,
            n_tags: 0,
            max_seq_len: 512,
            layout_buckets: 32,
            roi_patch: (8, 8),
            dropout_p: 0.1,
            inner_encoder: CnnSpec::cnn(2),
            outer_encoder: Some(CnnSpec::cnn(4)),
            fusion: Fusion::Early,
            ve_visual: VeVisual::Replace,
            precision: Precision::F32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} must be a positive multiple of n_heads {}", self.d_model, self.n_heads));
        }
        if self.roi_patch.0 == 0 || self.roi_patch.1 == 0 {
            return bad("roi_patch must be at least 1x1".into());
        }
        if self.vocab_size < 2 || self.n_tags == 0 {
            return bad(format!("vocab_size {} / n_tags {} not set", self.vocab_size, self.n_tags));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        if self.layout_buckets == 0 || self.max_seq_len == 0 || self.ffn_dim == 0 {
            return bad("layout_buckets, max_seq_len and ffn_dim must be positive".into());
        }
        for spec in std::iter::once(&self.inner_encoder).chain(self.outer_encoder.as_ref()) {
            if spec.depth == 0 || spec.channels == 0 {
                return bad(format!("encoder {spec:?} needs depth and channels >= 1"));
            }
        }
        Ok(())
    }

    /// Whether the encoders pool (both patch sides even).
    pub fn pools(&self) -> bool {
        self.roi_patch.0 % 2 == 0 && self.roi_patch.1 % 2 == 0
    }

    /// Flattened encoder feature length before the projection to `d_model`.
    pub fn encoder_features(&self, spec: &CnnSpec) -> usize {
        let (h, w) = self.roi_patch;
        if self.pools() {
            (h / 2) * (w / 2) * spec.channels
        } else {
            h * w * spec.channels
        }
    }
}
