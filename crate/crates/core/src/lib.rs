//! Orientation-aware retinal vessel segmentation.
//!
//! The network pairs plain and Gabor-modulated dynamic convolutions in a
//! U-shaped encoder/decoder, gates skips with local/global attention, fuses
//! decoder scales with cross-correlated non-local attention and refines the
//! final features by prediction confidence. Everything is built on
//! [`oce_autograd`].
//!
//! Parameters live in a [`nn::ParamStore`]; a forward pass runs inside a
//! [`nn::Session`], which records onto an autodiff graph.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod dcoa;
mod error;
pub mod gabor;
pub mod infer;
pub mod loss;
pub mod model;
pub mod nn;
pub mod nonlocal;
pub mod optim;
pub mod preprocess;
pub mod train;
pub mod uarm;

pub use config::Config;
pub use error::{Error, InBlock, Result};
pub use model::{Model, NetworkConfig};
