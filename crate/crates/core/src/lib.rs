//! Single-image anthropometry pipeline: geometric preprocessing, pixel-per-metric
//! height estimation, mesh sampling, multi-modal embedding fusion for weight
//! regression, and derived health metrics.

pub mod error;
pub mod geometry;
pub mod raster;

pub use error::{Error, Result};
pub mod height;
pub mod recon3d;
pub mod embedding;
pub mod fusion;
pub mod health;
pub mod perception;
pub mod synth;
pub mod config;
pub mod pipeline;
pub mod eval;

pub use health::Gender;
