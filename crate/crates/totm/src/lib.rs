pub mod bench;
pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod fft;
pub mod losses;
pub mod model;
pub mod nn;
pub mod synth;
pub mod tensor;
pub mod toeplitz;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
