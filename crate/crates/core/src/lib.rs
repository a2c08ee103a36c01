//! Mini-Net: a lightweight encoder-decoder for binary medical image
//! segmentation, with the tensor engine, losses, metrics and training
//! pipeline it needs.

pub mod architecture;
pub mod audit;
pub mod autodiff;
pub mod error;
pub mod objectives;
pub mod pipeline;
pub mod seed;

pub use architecture::{MiniNet, ModelConfig};
pub use autodiff::{ConvSpec, Tape, Tensor, Var};
pub use error::{CheckpointError, Error, RecordFailure, Result};
