//! Building-footprint segmentation with conditional (Wasserstein) GANs.
//!
//! A U-Net generator maps an RGB patch to a footprint mask; a PatchGAN
//! critic scores `(image, mask)` pairs. The crate covers the raster
//! pipeline, both networks, the loss family, training, checkpoints, and
//! evaluation metrics.

pub mod checkpoint;
pub mod config;
pub mod data;
mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod optim;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
