//! Mini-Net layers, parameter storage and checkpoints.

pub mod checkpoint;
pub mod dmres;
pub mod model;
pub mod params;
pub mod session;

pub use checkpoint::{Checkpoint, TrainingCursor};
pub use dmres::{BlockConfig, DecoderStage, DmresBlock, EncoderStage, MultiScale};
pub use model::{MiniNet, ModelConfig, TRACE_POINTS};
pub use params::{
    Conv, GroupCount, Norm, Param, ParamBuilder, ParamCount, ParamId, ParamKind, ParamStore,
};
pub use session::{apply_pending, Mode, PendingStats, Session, SessionOutput, Trace};
