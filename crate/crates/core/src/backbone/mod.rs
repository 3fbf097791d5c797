//! Layout-aware transformer backbone with visual segment embeddings, built on a small
//! reverse-mode autodiff tape.

pub mod batch;
pub mod config;
pub mod forward;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod params;
pub mod roi;
pub mod tensor;
pub mod vocab;

pub use batch::{layout_bucket, PreparedDoc, TokenBatch};
pub use config::{CnnSpec, Fusion, ModelConfig, Precision, VeVisual};
pub use forward::{build_flow, forward, forward_hidden, Dropout, Flow, FlowNodes, TokenDistributions};
pub use gradcheck::{check_gradients, GradCheck};
pub use graph::{AttnBias, ConvGeom, Gradients, Graph, NodeId};
pub use model::{AnyModel, Model, CHECKPOINT_MAGIC};
pub use params::{init_params, ModelParams, OuterEncoderParams, Param, ParamId};
pub use roi::{roi_crop, roi_crop_rect};
pub use tensor::{Scalar, Tensor};
pub use vocab::{Vocab, PAD_ID, UNK_ID};
