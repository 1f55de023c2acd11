pub mod cli;
pub mod config;
pub mod data;
pub mod decoders;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod objective;
pub mod person;
pub mod tensor;
pub mod tokens;
pub mod train;

pub use config::{ModelConfig, Variant};
pub use error::{Error, Result};
pub use tensor::{Scalar, Tape, Tensor, Var};
