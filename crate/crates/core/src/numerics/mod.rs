//! Dense linear algebra, losses, optimizer and gradient verification.

mod checkpoint;
mod gradcheck;
mod loss;
mod matrix;
mod param;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
};
pub use gradcheck::{finite_diff_check, relative_error, GradCheckOptions, GradCheckReport};
pub use loss::{categorical_nll, softmax, softmax_cross_entropy, softmax_into, PROB_FLOOR};
pub use matrix::{gemm, Matrix};
pub use param::{
    adam_update, clip_global_norm, global_grad_norm, AdamConfig, ParamSet, Parameter,
};
