//! Descriptors, the MIL network, its loss, optimizers and checkpoints.

pub mod checkpoint;
pub mod descriptor;
pub mod loss;
pub mod model;
pub mod optim;
pub mod schedule;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use descriptor::{patch_descriptor, Descriptor, DESCRIPTOR_DIM};
pub use loss::{weighted_bce, weighted_bce_grad};
pub use model::{gated_attention_pool, AttentionOutput, ModelParams, Tensor};
pub use optim::{OptimizerKind, OptimizerState};
pub use schedule::onecycle_lr;
