//! Radio environment knowledge pool.
//!
//! Pipeline: a deterministic geometric channel oracle produces path loss for
//! receiver positions in a box-scatterer scene; per-position environment
//! features (location, volume, blockage, distance) are learned against path
//! loss with a random forest; permutation importances become group weights and
//! a 15-entry knowledge spectrum; spectra and models live in a capacity-bounded
//! pool that answers, refines, transfers or generates knowledge and drives
//! path-loss prediction.

pub mod error;
pub mod features;
pub mod forest;
pub mod geometry;
pub mod pipeline;
pub mod pool;
pub mod predict;
pub mod propagation;
pub mod rng;
pub mod spectrum;

pub use error::{RekpError, Result};
