//! Unsupervised metal artifact reduction network for desk-scale CT.
//!
//! The generator pairs a hierarchical dense-transformer encoder with
//! artifact and content encoders and four decoders; training alternates
//! patch-discriminator and generator steps on unpaired pools simulated by
//! `dtec-ctsim`.

pub mod ablate;
pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod conv;
pub mod data;
pub mod dtd;
mod error;
pub mod eval;
pub mod figures;
pub mod generator;
pub mod hde;
pub mod layers;
pub mod losses;
pub mod params;
pub mod train;

pub use config::{LossWeights, ModelConfig, TrainConfig};
pub use error::{Error, Result};
