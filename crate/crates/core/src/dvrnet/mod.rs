//! 3D convolutional regressors (DVR2 and DVR3).

mod checkpoint;
mod config;
mod kernels;
mod loss;
mod model;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, DVRW_MAGIC, DVRW_VERSION};
pub use config::{
    Activation, DvrConfig, InputShape, LayerKind, LayerSpec, Scale, Shape, Variant, FC_DROPOUT,
};
pub use loss::{batch_loss, loss_joint, loss_single, LossKind, LossWeights};
pub use model::{DvrModel, Gradients, Layer, Mode, Pass, Tape, BN_EPS, BN_MOMENTUM};
