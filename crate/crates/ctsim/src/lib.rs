//! Desk-scale CT simulation sandbox.
//!
//! Everything here works on small square parallel-beam geometries with unit
//! pixel spacing: synthetic ellipse phantoms with optional metal inserts, a
//! ray-driven Radon transform, Ram-Lak filtered back-projection, a
//! beam-hardening/photon-noise metal corruption model, the linear
//! interpolation (LI) metal artifact baseline and the PSNR/SSIM/MSE scores
//! used to evaluate restorations.

pub mod corrupt;
pub mod dataset;
mod error;
pub mod image;
pub mod io;
pub mod li;
pub mod metrics;
pub mod phantom;
pub mod radon;

pub use corrupt::{corrupt, CorruptedPair, CorruptionParams};
pub use error::{Result, SimError};
pub use image::{Image, MetalMask};
pub use li::li_mar;
pub use metrics::{mse, psnr, ssim, Scores};
pub use phantom::generate_phantom;
pub use radon::{fbp, radon, Sinogram};
