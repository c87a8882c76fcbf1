//! gridpop: labeled tile datasets and gridded population estimates from
//! georeferenced settlement imagery and community-mapped building footprints.
//!
//! The pipeline stages, each in its own module:
//!
//! 1. [`geodata`] parses PNG + world file rasters and GeoJSON footprints and
//!    provides exact polygon area and box clipping.
//! 2. [`tiler`] lays a metric tile grid over the raster, crops each cell and
//!    area-resamples it to the model input size.
//! 3. [`rasterizer`] measures the residential occupancy of each tile by
//!    supersampled coverage, with an exact clipped-area oracle.
//! 4. [`labeler`] applies the cloud filter, the occupancy threshold and the
//!    site-level train/val split, and writes the manifest.
//! 5. [`classifier`] is a feature-based logistic model on tile images.
//! 6. [`popgrid`] allocates a population total over the grid and aggregates
//!    it to coarser resolutions without losing mass.
//! 7. [`synth`] generates seeded synthetic settlements with exact truth.
//!
//! [`pipeline`] strings the stages together for in-memory use.

pub mod classifier;
pub mod config;
mod error;
pub mod geodata;
pub mod labeler;
mod par;
pub mod pipeline;
pub mod popgrid;
pub mod rasterizer;
pub mod synth;
pub mod tiler;

pub use error::{Error, Result};
