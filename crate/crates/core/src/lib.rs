//! Attention-guided encoder/attention/decoder LSTM for compositional sequence
//! classification.

pub mod autodiff;
mod binio;
pub mod cli;
pub mod config;
pub mod datasynth;
pub mod error;
pub mod features;
pub mod model;
pub mod netpbm;
pub mod recurrent;
pub mod tensor;
pub mod training;
pub mod viz;

pub use error::{Error, Result};
pub use tensor::{Precision, Real, Tensor};
