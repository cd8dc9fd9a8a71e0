//! Dynamic Gaussian splatting with superpoint-level rigid deformation.

pub mod deform;
pub mod error;
pub mod geom;
pub mod image;
pub mod io;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rasterizer;
pub mod scene;
pub mod superpoint;
pub mod train;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
