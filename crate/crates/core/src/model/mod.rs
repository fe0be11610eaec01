//! The task model: MLP feature extractor + linear classifier, its optimizer,
//! the learning-rate schedule and binary checkpoints.

mod checkpoint;
mod mlp;
mod optim;

pub use checkpoint::{
    from_bytes, load_checkpoint, load_checkpoint_expecting, save_checkpoint, to_bytes, DimExpectation, MAGIC, VERSION,
};
pub use mlp::{Activation, Dense, MlpModel, ModelDims, ParamVars};
pub use optim::{lr_at, sgd_step, LrSchedule, OptimizerState, SgdConfig};
