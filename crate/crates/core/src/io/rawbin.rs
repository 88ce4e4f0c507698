//! Raw binary raster format: a `.bin` payload of row-major,
//! band-sequential, little-endian samples plus a JSON sidecar (same path
//! with a `.json` extension) carrying dimensions, dtype, nodata, and the
//! geotransform.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Dtype, GeoTransform, RasterGrid, Samples};

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    width: usize,
    height: usize,
    bands: usize,
    dtype: String,
    nodata: Option<f64>,
    /// origin_lon, origin_lat, pixel_width, pixel_height
    transform: [f64; 4],
}

fn sidecar_path(payload: &Path) -> std::path::PathBuf {
    payload.with_extension("json")
}

pub fn read(path: &Path) -> Result<RasterGrid> {
    let sidecar = sidecar_path(path);
    let text = fs::read_to_string(&sidecar).map_err(|e| Error::MalformedHeader {
        path: sidecar.display().to_string(),
        reason: e.to_string(),
    })?;
    let header: Header = serde_json::from_str(&text).map_err(|e| Error::MalformedHeader {
        path: sidecar.display().to_string(),
        reason: e.to_string(),
    })?;
    if header.bands == 0 {
        return Err(Error::NoBands);
    }
    let dtype = Dtype::from_name(&header.dtype)?;
    let transform = GeoTransform::new(
        header.transform[0],
        header.transform[1],
        header.transform[2],
        header.transform[3],
    )?;

    let payload = fs::read(path)?;
    let expected = header.width * header.height * header.bands * dtype.size_bytes();
    if payload.len() != expected {
        return Err(Error::PayloadSize { expected, got: payload.len() });
    }
    let samples = match dtype {
        Dtype::U8 => Samples::U8(payload),
        Dtype::U16 => Samples::U16(
            payload.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect(),
        ),
        Dtype::F32 => Samples::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        ),
    };
    RasterGrid::new(header.width, header.height, header.bands, samples, header.nodata, transform)
}

pub fn write(path: &Path, grid: &RasterGrid) -> Result<()> {
    let t = grid.transform();
    let header = Header {
        width: grid.width(),
        height: grid.height(),
        bands: grid.bands(),
        dtype: grid.dtype().name().to_string(),
        nodata: grid.nodata(),
        transform: [t.origin_lon, t.origin_lat, t.pixel_width, t.pixel_height],
    };
    let mut payload = Vec::with_capacity(grid.samples().len() * grid.dtype().size_bytes());
    match grid.samples() {
        Samples::U8(v) => payload.extend_from_slice(v),
        Samples::U16(v) => {
            for s in v {
                payload.extend_from_slice(&s.to_le_bytes());
            }
        }
        Samples::F32(v) => {
            for s in v {
                payload.extend_from_slice(&s.to_le_bytes());
            }
        }
    }
    let mut text = serde_json::to_string_pretty(&header)?;
    text.push('\n');
    fs::write(sidecar_path(path), text)?;
    fs::write(path, payload)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_sidecar_is_a_header_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("orphan.bin");
        fs::write(&p, [0u8; 4]).unwrap();
        assert!(matches!(read(&p), Err(Error::MalformedHeader { .. })));
    }

    #[test]
    fn invalid_json_is_a_header_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.bin");
        fs::write(&p, [0u8; 4]).unwrap();
        fs::write(dir.path().join("bad.json"), "{not json").unwrap();
        let err = read(&p).unwrap_err();
        assert!(matches!(err, Error::MalformedHeader { .. }), "{err}");
    }

    #[test]
    fn unknown_dtype_is_reported_as_such() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("odd.bin");
        fs::write(&p, [0u8; 8]).unwrap();
        fs::write(
            dir.path().join("odd.json"),
            r#"{"width":1,"height":1,"bands":1,"dtype":"int64","nodata":null,"transform":[0.0,1.0,1.0,1.0]}"#,
        )
        .unwrap();
        assert!(matches!(read(&p), Err(Error::UnknownDtype(ref d)) if d == "int64"));
    }

    #[test]
    fn truncated_payload_is_a_size_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("short.bin");
        fs::write(&p, [0u8; 5]).unwrap();
        fs::write(
            dir.path().join("short.json"),
            r#"{"width":2,"height":2,"bands":1,"dtype":"uint16","nodata":null,"transform":[0.0,1.0,1.0,1.0]}"#,
        )
        .unwrap();
        assert!(matches!(read(&p), Err(Error::PayloadSize { expected: 8, got: 5 })));
    }

    #[test]
    fn payload_bytes_are_little_endian() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("le.bin");
        let t = GeoTransform::new(0.0, 1.0, 1.0, 1.0).unwrap();
        let g = RasterGrid::single_band(1, 1, Samples::U16(vec![0x0102]), None, t).unwrap();
        write(&p, &g).unwrap();
        assert_eq!(fs::read(&p).unwrap(), vec![0x02, 0x01]);
    }
}
