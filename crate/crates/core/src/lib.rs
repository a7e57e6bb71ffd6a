//! Large kernel attention, VAN backbones and their exact cost accounting.

pub mod checks;
pub mod cli;
pub mod cost;
pub mod error;
pub mod io;
pub mod lka;
pub mod nn;
pub mod tensor;
pub mod van;

pub use error::{Error, Result};
pub use tensor::{
    elementwise_add, elementwise_mul, scale_channels, DType, Element, NormalSampler, Tensor,
};
