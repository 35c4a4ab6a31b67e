pub mod blocks;
pub mod error;
pub mod flops;
pub mod model;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Scalar, Shape, Tape, Tensor, Var};
