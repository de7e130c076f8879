//! Behavior modeling with a dual-stack recurrent network: motion coding,
//! the fly world, datasets, scoring and closed-loop simulation.

pub mod codec;
pub mod dataset;
pub mod error;
pub mod fly;
pub mod gru;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod scalar;
pub mod simulator;

pub use error::{Error, Result};

pub type Matrix32 = numerics::Matrix<f32>;
pub type Matrix64 = numerics::Matrix<f64>;
pub type BehaviorModel32 = model::BehaviorModel<f32>;
pub type BehaviorModel64 = model::BehaviorModel<f64>;
