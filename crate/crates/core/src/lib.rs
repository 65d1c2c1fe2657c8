//! Review-guided answer helpfulness prediction.
//!
//! The crate contains a small reverse-mode autodiff engine ([`tensor`]), the
//! model components built on it, the data pipeline, inference pre-training
//! and the training/evaluation drivers used by the `rahp` binary.

pub mod commands;
pub mod config;
pub mod data;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod nli;
pub mod qa;
pub mod ra;
pub mod tensor;
pub mod text;
pub mod train;

pub use config::RahpConfig;
pub use error::{Error, Result};
