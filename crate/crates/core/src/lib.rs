//! Nonnegative CP decomposition of location x signal x time tensors with
//! latent SIR regularization of the temporal factor, for multi-step
//! epidemic forecasting.

pub mod admm;
pub mod cli;
pub mod config;
pub mod engine;
pub mod eval;
pub mod epi;
pub mod error;
pub mod io;
pub mod model;
pub mod sir_fit;
pub mod synth;
pub mod tensor;

pub use error::{Result, StelarError};
