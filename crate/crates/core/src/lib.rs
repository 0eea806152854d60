//! Relative camera pose regression from image pairs.
//!
//! A small reverse-mode autodiff engine drives a feature extractor
//! (conv pyramid plus self/cross attention), a correlation matcher that warps
//! target features onto the source grid, and a residual CNN that regresses a
//! quaternion and translation. Geometry utilities, synthetic data and a
//! training loop round it out.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod extractor;
pub mod geometry;
pub mod image;
pub mod init;
pub mod loss;
pub mod matcher;
pub mod model;
pub mod regressor;
pub mod train;

pub use error::{Error, Result};
pub use geometry::{AbsolutePose, RelativePose, UnitQuaternion};
pub use image::Image;
pub use model::{ModelConfig, PoseNet, Variant};
