pub mod autodiff;
pub mod caption;
pub mod config;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod evaluate;
pub mod generator;
pub mod io;
pub mod kernels;
pub mod metrics;
pub mod perceptual;
pub mod rng;
pub mod tensor;
pub mod text2latent;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
