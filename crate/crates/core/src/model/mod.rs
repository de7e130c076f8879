//! The dual-stack behavior network, its ablations, losses and training.

mod config;
mod network;
mod train;

pub use config::{LabelMode, ModelConfig, Variant};
pub use network::{
    config_path, BehaviorModel, LossReport, ModelState, SequenceOutput, StepOutput, UnitOverride,
    Window, LABEL_CLAMP,
};
pub use train::{evaluate, train_epoch, train_window, TrainOptions};
