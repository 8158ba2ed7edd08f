//! Stochastic physics-informed neural networks for SDEs with additive noise.

pub mod bridge;
pub mod cli;
pub mod config;
pub mod csv_io;
pub mod dual;
pub mod error;
pub mod evaluation;
pub mod expr;
pub mod levy_paths;
pub mod network;
pub mod reference;
pub mod rng;
pub mod sde;
pub mod training;

pub use error::{Error, Result};
