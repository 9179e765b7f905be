//! Desk-scale differentiable 3D encoder-decoder and its training recipe.

mod augment;
mod graph;
mod loss;
mod net;
mod optim;
mod tensor;
mod train;

pub use augment::{augment, AugmentConfig, InPlaneTransform};
pub use graph::{Gradients, Graph, NodeId, Param, ParamId, ParamStore};
pub use loss::{focal_loss, FocalLoss, CLAMP};
pub use net::{param_count, Arch, MicroNet, MicroNetConfig};
pub use optim::{adam_step, cyclic_lr, AdamConfig, AdamState, CyclicLr};
pub use tensor::Tensor;
pub use train::{
    loss_and_gradients, predict_tta, read_loss_csv, train, write_loss_csv, Checkpoint, CheckpointHeader,
    LossRecord, ParamEntry, RngState, TrainConfig, TrainRun, TrainSample, TRAIN_STREAM,
};
