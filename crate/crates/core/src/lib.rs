//! Core library for the gbm building-map pipeline: raster model and IO,
//! radiometric calibration, coregistration, distance-based label
//! generation, segmentation ensemble with majority voting, land-cover
//! filtering, downstream analytics, and the deterministic pipeline
//! driver.

pub mod analytics;
pub mod calibrate;
pub mod coregister;
pub mod ensemble;
pub mod error;
pub mod evaluate;
pub mod fixtures;
pub mod io;
pub mod labelgen;
pub mod pipeline;
pub mod polygons;
pub mod postprocess;
pub mod raster;
pub mod scenes;

pub use error::{Error, Result};
pub use raster::{Dtype, GeoBox, GeoTransform, GridCell, RasterGrid, Samples, TileSpec};
