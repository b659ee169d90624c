//! Simulation and inference for directed-chain SDEs with mean-field interaction.

pub mod chain;
pub mod cli;
pub mod drift;
pub mod error;
pub mod inference;
pub mod limit;
pub mod measures;
pub mod numeric;
pub mod oracle;
pub mod paths;
pub mod rng;

pub use error::{Error, Result};
