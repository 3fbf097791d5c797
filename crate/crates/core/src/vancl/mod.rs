//! Dual-flow training: a standard flow on the original page and a vision-enhanced flow
//! on the painted page, tied by a consistency loss between their tag distributions.

pub mod loss;
pub mod optim;
pub mod trainer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use loss::{consistency_loss, cross_entropy, js_divergence, kl_divergence, DivergenceKind};
pub use optim::Adam;
pub use trainer::{dropout_seed, prepare_pairs, resolve_model_config, train, EpochLog, StepReport, TrainOutput, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mode {
    /// Joint supervision on both flows plus consistency.
    Vancl,
    /// Two networks on the original page, each pulled toward the other's detached prediction.
    Mutual,
    /// Two dropout draws of the same network on the original page.
    Rdrop,
    /// Both flows run, consistency weight forced to zero.
    None,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Vancl => "VANCL",
            Mode::Mutual => "MUTUAL",
            Mode::Rdrop => "RDROP",
            Mode::None => "NONE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub adam_betas: (f64, f64),
    /// Overrides the model's dropout rate when set.
    pub dropout_p: Option<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda: f64,
    pub divergence: DivergenceKind,
    pub mode: Mode,
    pub share_weights: bool,
    /// With `false` the vision-enhanced flow reads the original page.
    pub use_paint: bool,
    /// Single-flow training: the vision-enhanced flow is skipped entirely.
    pub baseline: bool,
    /// Built-in scheme row (`"1"`..`"8"`) or a path to a JSON scheme.
    pub scheme: String,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            adam_betas: (0.9, 0.99),
            dropout_p: None,
            batch_size: 8,
            epochs: 20,
            lambda: 1.0,
            divergence: DivergenceKind::Kl,
            mode: Mode::Vancl,
            share_weights: true,
            use_paint: true,
            baseline: false,
            scheme: "1".into(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::Config(format!("adam betas {:?} outside [0, 1)", self.adam_betas)));
        }
        if let Some(p) = self.dropout_p {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("dropout_p {p} outside [0, 1)")));
            }
        }
        if self.baseline && self.mode != Mode::None {
            return Err(Error::Config(format!("baseline training needs mode NONE, got {}", self.mode.as_str())));
        }
        Ok(())
    }

    /// Consistency weight actually applied.
    pub fn effective_lambda(&self) -> f64 {
        if self.mode == Mode::None || self.baseline {
            0.0
        } else {
            self.lambda
        }
    }

    /// The no-second-flow baseline derived from this config.
    pub fn as_baseline(&self) -> Self {
        Self {
            mode: Mode::None,
            baseline: true,
            ..self.clone()
        }
    }
}
