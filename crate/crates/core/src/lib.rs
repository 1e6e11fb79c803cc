//! Padé approximant neurons: rational convolutional layers, learnable
//! feature shifting, reference networks and the training tools around them.

pub mod error;

pub mod autograd;
pub mod cli;
pub mod data;
pub mod kernels;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod paon;
pub mod shifter;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{DType, Scalar, Tensor};
