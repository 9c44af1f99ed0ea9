//! Simulation and analysis toolkit for studying how predictor breadth trades
//! off against per-predictor depth when recovering binary latent states
//! through noisy, redundant measurements.

pub mod bits;
pub mod evaluation;
pub mod forest;
pub mod error;
pub mod generative;
pub mod harness;
pub mod info;
pub mod latent;
pub mod observation;
pub mod oracles;
pub mod seed;
pub mod selection;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
