//! Steering-angle regression toolkit.
pub mod augment;
pub mod autodiff;
pub mod config;
pub mod dataset;
pub mod error;
pub mod models;
pub mod nn;
pub mod saliency;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
