pub mod commands;
pub mod config;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod regression;
pub mod retrieval;
pub mod service;
pub mod tensor;
pub mod world;

pub use error::{Error, Result};
