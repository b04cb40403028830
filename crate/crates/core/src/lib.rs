mod binfmt;
pub mod commands;
pub mod data;
pub mod error;
pub mod model;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, FormatError, Result};
pub use model::{ArchConfig, StaFlowNet, Variant};
pub use scalar::{Precision, Scalar};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type StaFlowNet32 = StaFlowNet<f32>;
pub type StaFlowNet64 = StaFlowNet<f64>;
