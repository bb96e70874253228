//! Simulation and reconstruction of hyperspectral video captured by a
//! coded-exposure-pixel sensor under time-multiplexed LED illumination.
//!
//! [`pipeline::Pipeline`] wires the stages together: [`forward`] renders coded
//! frames, [`demosaic`] splits them into per-LED sub-images, [`align`] warps
//! those to a common timestamp and [`reconstruct`] solves for 31-channel cubes.

pub mod align;
pub mod assets;
pub mod calibration;
pub mod coding;
pub mod demosaic;
pub mod config;
pub mod error;
pub mod eval;
pub mod forward;
pub mod io;
pub mod pipeline;
pub mod reconstruct;
pub mod render;
pub mod spectral;

pub use error::{Error, Result};
