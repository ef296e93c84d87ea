//! SEQ³: unsupervised sentence compression with a differentiable
//! compressor–reconstructor autoencoder.

pub mod autodiff;
pub mod checkpoint;
pub mod coders;
pub mod commands;
pub mod config;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod lm;
pub mod losses;
pub mod model;
pub mod optim;
pub mod rouge;
pub mod sampling;
pub mod stem;
pub mod synthetic;
pub mod tensor;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
