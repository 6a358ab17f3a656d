//! Geometry, alignment, loss and evaluation machinery for panoramic depth and
//! surface-normal estimation.
//!
//! The crate covers everything that surrounds a dense predictor operating on
//! cubemap faces:
//!
//! - [`spherical`]: the equirectangular (ERP) chart and bilinear sampling on it.
//! - [`cubemap`]: gnomonic face geometry, ERP <-> cubemap resampling, the
//!   face adjacency table and cross-face padding.
//! - [`geometry`]: depth representations, normals from depth, point clouds and
//!   sky masking.
//! - [`align`]: log-space shift, anchor-median metric scale and least-squares
//!   scale/shift alignment.
//! - [`losses`]: depth, normal and sky-segmentation loss kernels with analytic
//!   gradients.
//! - [`metrics`]: depth/normal evaluation metrics and seam consistency metrics.
//! - [`synth`]: analytic raycast scenes used as ground-truth oracles.
//! - [`io`]: PFM, 16-bit PNG, PLY and cubemap-stack file formats.
//!
//! World axes are X right, Y up, Z forward. Rasters are stored row-major with
//! row 0 at the top of the image.

pub mod align;
pub mod cubemap;
pub mod error;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod raster;
pub mod spherical;
pub mod synth;

pub use error::{Error, Result};
pub use raster::{Raster, Texel};
