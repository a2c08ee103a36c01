//! Tensors, the differentiable operator set and reverse-mode propagation.

pub mod batchnorm;
pub mod conv;
pub mod gradcheck;
pub mod parallel;
pub mod tape;
pub mod tensor;

pub use batchnorm::{BatchStats, RunningStats, BN_EPS, BN_MOMENTUM};
pub use conv::ConvSpec;
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, TensorCheck};
pub use tape::{BnMode, CustomOp, Gradients, Tape, Var};
pub use tensor::Tensor;
