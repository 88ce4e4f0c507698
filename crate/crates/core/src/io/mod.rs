//! Raster file IO. Two on-disk formats share one in-memory model:
//! GeoTIFF (`.tif`/`.tiff`) and a raw binary payload with a JSON sidecar
//! header (any other extension). Format choice is by extension on both
//! read and write.

pub mod geotiff;
pub mod rawbin;

use std::path::Path;

use crate::error::Result;
use crate::raster::RasterGrid;

fn is_tiff(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("tif") | Some("tiff")
    )
}

pub fn read_raster<P: AsRef<Path>>(path: P) -> Result<RasterGrid> {
    let path = path.as_ref();
    if is_tiff(path) {
        geotiff::read(path)
    } else {
        rawbin::read(path)
    }
}

pub fn write_raster<P: AsRef<Path>>(path: P, grid: &RasterGrid) -> Result<()> {
    let path = path.as_ref();
    if is_tiff(path) {
        geotiff::write(path, grid, geotiff::TiffCompression::None)
    } else {
        rawbin::write(path, grid)
    }
}

/// Like `write_raster`, but deflate-compressed when the target is a TIFF.
/// The raw format has no compression; it is written as-is.
pub fn write_raster_deflate<P: AsRef<Path>>(path: P, grid: &RasterGrid) -> Result<()> {
    let path = path.as_ref();
    if is_tiff(path) {
        geotiff::write(path, grid, geotiff::TiffCompression::Deflate)
    } else {
        rawbin::write(path, grid)
    }
}
