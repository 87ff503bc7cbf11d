//! Physically based Gaussian splatting for low-light scenes.

pub mod adam;
pub mod error;
pub mod frames;
pub mod geom;
pub mod gradcheck;
pub mod illum;
pub mod image;
pub mod loss;
pub mod metrics;
pub mod params;
pub mod scene;
pub mod raster;
pub mod render;
pub mod shading;
pub mod train;

pub use error::{Error, Result};
