//! Beam- and cell-level mobility management for high-speed railway mmWave
//! links: scenario geometry, channel synthesis, beam codebooks, measurement
//! models, a small neural-network engine, predictors and handover simulation.

pub mod channel;
pub mod codebook;
pub mod error;
pub mod handover;
pub mod measurement;
pub mod nn;
pub mod pipeline;
pub mod predictors;
pub mod scenario;
pub mod trace;
pub mod verify;

pub use error::{Error, Result};
