//! Georeferenced raster data model: grid geometry, windowing, mosaicking,
//! and per-row pixel areas.
//!
//! All geographic math uses the equirectangular approximation with a
//! per-row cos(latitude) correction. Rasters are immutable after
//! construction as far as the pipeline is concerned; every operation
//! returns a new grid.

use crate::error::{Error, Result};

/// Meters per degree of longitude at the equator (and per degree of
/// latitude everywhere, under the spherical approximation).
pub const METERS_PER_DEGREE: f64 = 111_320.0;

/// Side length of a selection grid cell, degrees.
pub const GRID_DEG: f64 = 0.2;

/// Side length of an output tile, degrees.
pub const TILE_DEG: f64 = 5.0;

// Guard against off-by-one at exact pixel-boundary coordinates.
const PIXEL_EPS: f64 = 1e-9;

// ── geometry ────────────────────────────────────────────────────────────

/// Axis-aligned geographic box, degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoBox {
    pub min_lon: f64,
    pub min_lat: f64,
    pub max_lon: f64,
    pub max_lat: f64,
}

impl GeoBox {
    pub fn new(min_lon: f64, min_lat: f64, max_lon: f64, max_lat: f64) -> Self {
        GeoBox { min_lon, min_lat, max_lon, max_lat }
    }

    pub fn width(&self) -> f64 {
        self.max_lon - self.min_lon
    }

    pub fn height(&self) -> f64 {
        self.max_lat - self.min_lat
    }

    /// True if the boxes share interior area (edge-touching does not count).
    pub fn intersects(&self, other: &GeoBox) -> bool {
        self.min_lon < other.max_lon
            && other.min_lon < self.max_lon
            && self.min_lat < other.max_lat
            && other.min_lat < self.max_lat
    }

    pub fn intersection(&self, other: &GeoBox) -> Option<GeoBox> {
        if !self.intersects(other) {
            return None;
        }
        Some(GeoBox {
            min_lon: self.min_lon.max(other.min_lon),
            min_lat: self.min_lat.max(other.min_lat),
            max_lon: self.max_lon.min(other.max_lon),
            max_lat: self.max_lat.min(other.max_lat),
        })
    }

    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        lon >= self.min_lon && lon < self.max_lon && lat >= self.min_lat && lat < self.max_lat
    }

    pub fn union(&self, other: &GeoBox) -> GeoBox {
        GeoBox {
            min_lon: self.min_lon.min(other.min_lon),
            min_lat: self.min_lat.min(other.min_lat),
            max_lon: self.max_lon.max(other.max_lon),
            max_lat: self.max_lat.max(other.max_lat),
        }
    }

    pub fn area_deg2(&self) -> f64 {
        (self.width().max(0.0)) * (self.height().max(0.0))
    }
}

/// Affine mapping from pixel indices to geographic coordinates.
/// Rows advance southward: pixel (r, c) has its center at
/// `(origin_lon + (c+0.5)*pixel_width, origin_lat - (r+0.5)*pixel_height)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoTransform {
    pub origin_lon: f64,
    pub origin_lat: f64,
    pub pixel_width: f64,
    pub pixel_height: f64,
}

impl GeoTransform {
    pub fn new(origin_lon: f64, origin_lat: f64, pixel_width: f64, pixel_height: f64) -> Result<Self> {
        if pixel_width <= 0.0 || pixel_height <= 0.0 {
            return Err(Error::InvalidPixelSize { width: pixel_width, height: pixel_height });
        }
        Ok(GeoTransform { origin_lon, origin_lat, pixel_width, pixel_height })
    }

    /// Geographic coordinates of the center of pixel (row, col).
    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_lon + (col as f64 + 0.5) * self.pixel_width,
            self.origin_lat - (row as f64 + 0.5) * self.pixel_height,
        )
    }

    /// Pixel (row, col) containing the given point. May be out of bounds;
    /// callers check against the raster dimensions.
    pub fn pixel_of(&self, lon: f64, lat: f64) -> (i64, i64) {
        let col = ((lon - self.origin_lon) / self.pixel_width).floor() as i64;
        let row = ((self.origin_lat - lat) / self.pixel_height).floor() as i64;
        (row, col)
    }
}

// ── samples ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    U8,
    U16,
    F32,
}

impl Dtype {
    pub fn size_bytes(&self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::U16 => 2,
            Dtype::F32 => 4,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Dtype::U8 => "uint8",
            Dtype::U16 => "uint16",
            Dtype::F32 => "float32",
        }
    }

    pub fn from_name(name: &str) -> Result<Dtype> {
        match name {
            "uint8" => Ok(Dtype::U8),
            "uint16" => Ok(Dtype::U16),
            "float32" => Ok(Dtype::F32),
            other => Err(Error::UnknownDtype(other.to_string())),
        }
    }

    /// Sentinel used for gap pixels when no input offers one.
    pub fn default_nodata(&self) -> f64 {
        match self {
            Dtype::U8 => 255.0,
            Dtype::U16 => 65_535.0,
            Dtype::F32 => -9999.0,
        }
    }
}

/// Row-major, band-sequential sample storage.
#[derive(Debug, Clone, PartialEq)]
pub enum Samples {
    U8(Vec<u8>),
    U16(Vec<u16>),
    F32(Vec<f32>),
}

impl Samples {
    pub fn dtype(&self) -> Dtype {
        match self {
            Samples::U8(_) => Dtype::U8,
            Samples::U16(_) => Dtype::U16,
            Samples::F32(_) => Dtype::F32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Samples::U8(v) => v.len(),
            Samples::U16(v) => v.len(),
            Samples::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn filled(dtype: Dtype, len: usize, value: f64) -> Samples {
        match dtype {
            Dtype::U8 => Samples::U8(vec![value as u8; len]),
            Dtype::U16 => Samples::U16(vec![value as u16; len]),
            Dtype::F32 => Samples::F32(vec![value as f32; len]),
        }
    }

    #[inline]
    pub fn get(&self, idx: usize) -> f64 {
        match self {
            Samples::U8(v) => v[idx] as f64,
            Samples::U16(v) => v[idx] as f64,
            Samples::F32(v) => v[idx] as f64,
        }
    }

    /// Store a value read from a grid of the same dtype. Exact for values
    /// that originated in this dtype; integer targets round and saturate.
    #[inline]
    pub fn set(&mut self, idx: usize, value: f64) {
        match self {
            Samples::U8(v) => v[idx] = value.round().clamp(0.0, u8::MAX as f64) as u8,
            Samples::U16(v) => v[idx] = value.round().clamp(0.0, u16::MAX as f64) as u16,
            Samples::F32(v) => v[idx] = value as f32,
        }
    }
}

// ── raster grid ─────────────────────────────────────────────────────────

/// A georeferenced, possibly multiband raster.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    width: usize,
    height: usize,
    bands: usize,
    samples: Samples,
    nodata: Option<f64>,
    transform: GeoTransform,
}

impl RasterGrid {
    pub fn new(
        width: usize,
        height: usize,
        bands: usize,
        samples: Samples,
        nodata: Option<f64>,
        transform: GeoTransform,
    ) -> Result<Self> {
        if bands == 0 {
            return Err(Error::NoBands);
        }
        let expected = width * height * bands;
        if samples.len() != expected {
            return Err(Error::SampleCount { expected, got: samples.len() });
        }
        Ok(RasterGrid { width, height, bands, samples, nodata, transform })
    }

    /// Single-band constructor, the common case for masks and labels.
    pub fn single_band(
        width: usize,
        height: usize,
        samples: Samples,
        nodata: Option<f64>,
        transform: GeoTransform,
    ) -> Result<Self> {
        RasterGrid::new(width, height, 1, samples, nodata, transform)
    }

    pub fn filled(
        width: usize,
        height: usize,
        bands: usize,
        dtype: Dtype,
        value: f64,
        nodata: Option<f64>,
        transform: GeoTransform,
    ) -> Result<Self> {
        let samples = Samples::filled(dtype, width * height * bands, value);
        RasterGrid::new(width, height, bands, samples, nodata, transform)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn dtype(&self) -> Dtype {
        self.samples.dtype()
    }

    pub fn nodata(&self) -> Option<f64> {
        self.nodata
    }

    pub fn transform(&self) -> &GeoTransform {
        &self.transform
    }

    pub fn samples(&self) -> &Samples {
        &self.samples
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Geographic extent covered by the pixel lattice.
    pub fn extent(&self) -> GeoBox {
        GeoBox {
            min_lon: self.transform.origin_lon,
            max_lon: self.transform.origin_lon + self.width as f64 * self.transform.pixel_width,
            max_lat: self.transform.origin_lat,
            min_lat: self.transform.origin_lat - self.height as f64 * self.transform.pixel_height,
        }
    }

    #[inline]
    pub fn index(&self, band: usize, row: usize, col: usize) -> usize {
        band * self.width * self.height + row * self.width + col
    }

    /// Raw sample value, nodata included.
    #[inline]
    pub fn get(&self, band: usize, row: usize, col: usize) -> f64 {
        self.samples.get(self.index(band, row, col))
    }

    #[inline]
    pub fn set(&mut self, band: usize, row: usize, col: usize, value: f64) {
        let idx = self.index(band, row, col);
        self.samples.set(idx, value);
    }

    /// Bit-exact nodata comparison in the raster's own dtype.
    #[inline]
    pub fn is_nodata_value(&self, value: f64) -> bool {
        match self.nodata {
            None => false,
            Some(nd) => match self.samples.dtype() {
                Dtype::F32 => (value as f32).to_bits() == (nd as f32).to_bits(),
                Dtype::U8 | Dtype::U16 => value == nd,
            },
        }
    }

    /// Sample value, or None when it equals the nodata sentinel.
    #[inline]
    pub fn value(&self, band: usize, row: usize, col: usize) -> Option<f64> {
        let v = self.get(band, row, col);
        if self.is_nodata_value(v) {
            None
        } else {
            Some(v)
        }
    }

    /// A pixel is valid when no band holds the nodata sentinel.
    pub fn pixel_valid(&self, row: usize, col: usize) -> bool {
        (0..self.bands).all(|b| !self.is_nodata_value(self.get(b, row, col)))
    }

    /// Marks every band of the pixel with the nodata sentinel (no-op when
    /// the raster has none).
    pub fn set_pixel_nodata(&mut self, row: usize, col: usize) {
        if let Some(nd) = self.nodata {
            for b in 0..self.bands {
                self.set(b, row, col, nd);
            }
        }
    }

    /// Replaces the transform, keeping the pixel lattice.
    pub fn with_transform(mut self, transform: GeoTransform) -> Self {
        self.transform = transform;
        self
    }
}

// ── grid cells and tiles ────────────────────────────────────────────────

/// One 0.2-degree cell of the processing grid. `i` counts eastward from
/// the antimeridian origin, `j` northward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GridCell {
    pub i: i64,
    pub j: i64,
}

impl GridCell {
    /// Cell containing the point. Multiplying by 5 instead of dividing by
    /// 0.2 keeps boundary points exact (5.0 is representable, 0.2 is not).
    pub fn containing(lon: f64, lat: f64) -> GridCell {
        GridCell { i: (lon * 5.0).floor() as i64, j: (lat * 5.0).floor() as i64 }
    }

    pub fn bbox(&self) -> GeoBox {
        GeoBox {
            min_lon: self.i as f64 / 5.0,
            min_lat: self.j as f64 / 5.0,
            max_lon: (self.i + 1) as f64 / 5.0,
            max_lat: (self.j + 1) as f64 / 5.0,
        }
    }
}

/// One 5-degree output tile, keyed by its south-west corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TileSpec {
    pub lon0: i64,
    pub lat0: i64,
}

impl TileSpec {
    pub fn new(lon0: f64, lat0: f64) -> Result<Self> {
        if lon0.fract() != 0.0 || lat0.fract() != 0.0 || (lon0 as i64) % 5 != 0 || (lat0 as i64) % 5 != 0 {
            return Err(Error::MisalignedTile { lon0, lat0 });
        }
        Ok(TileSpec { lon0: lon0 as i64, lat0: lat0 as i64 })
    }

    pub fn containing(lon: f64, lat: f64) -> TileSpec {
        TileSpec {
            lon0: (lon / 5.0).floor() as i64 * 5,
            lat0: (lat / 5.0).floor() as i64 * 5,
        }
    }

    pub fn bbox(&self) -> GeoBox {
        GeoBox {
            min_lon: self.lon0 as f64,
            min_lat: self.lat0 as f64,
            max_lon: (self.lon0 + 5) as f64,
            max_lat: (self.lat0 + 5) as f64,
        }
    }
}

// ── operations ──────────────────────────────────────────────────────────

/// Cuts the sub-grid of `r` covering the intersection of `bbox` with the
/// raster extent, aligned to the source pixel lattice. No resampling.
pub fn crop_window(r: &RasterGrid, bbox: &GeoBox) -> Result<RasterGrid> {
    let ext = r.extent();
    let ib = bbox.intersection(&ext).ok_or(Error::EmptyIntersection)?;
    let t = r.transform();

    let col0 = ((ib.min_lon - t.origin_lon) / t.pixel_width + PIXEL_EPS).floor().max(0.0) as usize;
    let col1 = ((ib.max_lon - t.origin_lon) / t.pixel_width - PIXEL_EPS).ceil() as usize;
    let row0 = ((t.origin_lat - ib.max_lat) / t.pixel_height + PIXEL_EPS).floor().max(0.0) as usize;
    let row1 = ((t.origin_lat - ib.min_lat) / t.pixel_height - PIXEL_EPS).ceil() as usize;
    let col1 = col1.min(r.width());
    let row1 = row1.min(r.height());
    if col1 <= col0 || row1 <= row0 {
        return Err(Error::EmptyIntersection);
    }

    let (w, h) = (col1 - col0, row1 - row0);
    let transform = GeoTransform {
        origin_lon: t.origin_lon + col0 as f64 * t.pixel_width,
        origin_lat: t.origin_lat - row0 as f64 * t.pixel_height,
        pixel_width: t.pixel_width,
        pixel_height: t.pixel_height,
    };
    let mut samples = Samples::filled(r.dtype(), w * h * r.bands(), 0.0);
    for b in 0..r.bands() {
        for row in 0..h {
            for col in 0..w {
                samples.set(b * w * h + row * w + col, r.get(b, row0 + row, col0 + col));
            }
        }
    }
    RasterGrid::new(w, h, r.bands(), samples, r.nodata(), transform)
}

/// Composites `inputs` onto a fresh grid covering `target` at `resolution`
/// degrees per pixel. Each output pixel takes the first input in list
/// order that covers its center with valid data (nearest neighbor), so
/// callers order the list most-recent-first.
pub fn mosaic(inputs: &[&RasterGrid], target: &GeoBox, resolution: f64) -> Result<RasterGrid> {
    let first = *inputs.first().ok_or(Error::EmptyMosaicInput)?;
    if resolution <= 0.0 {
        return Err(Error::InvalidResolution(resolution));
    }
    for r in inputs {
        if r.bands() != first.bands() {
            return Err(Error::BandCountMismatch(first.bands(), r.bands()));
        }
        if r.dtype() != first.dtype() {
            return Err(Error::DtypeMismatch);
        }
    }
    let width = (target.width() / resolution - PIXEL_EPS).ceil() as usize;
    let height = (target.height() / resolution - PIXEL_EPS).ceil() as usize;
    if width == 0 || height == 0 {
        return Err(Error::EmptyTarget);
    }

    let bands = first.bands();
    let dtype = first.dtype();
    let nodata = inputs
        .iter()
        .find_map(|r| r.nodata())
        .unwrap_or_else(|| dtype.default_nodata());
    let transform = GeoTransform {
        origin_lon: target.min_lon,
        origin_lat: target.max_lat,
        pixel_width: resolution,
        pixel_height: resolution,
    };

    let mut out = RasterGrid::filled(width, height, bands, dtype, nodata, Some(nodata), transform)?;
    for row in 0..height {
        for col in 0..width {
            let (lon, lat) = transform.pixel_center(row, col);
            for r in inputs {
                let (sr, sc) = r.transform().pixel_of(lon, lat);
                if sr < 0 || sc < 0 || sr as usize >= r.height() || sc as usize >= r.width() {
                    continue;
                }
                let (sr, sc) = (sr as usize, sc as usize);
                if !r.pixel_valid(sr, sc) {
                    continue;
                }
                for b in 0..bands {
                    out.set(b, row, col, r.get(b, sr, sc));
                }
                break;
            }
        }
    }
    Ok(out)
}

/// Ground area of one pixel in row `row`, square meters, using the
/// equirectangular model with cos(latitude) shrink of the east-west side.
pub fn pixel_area_m2(r: &RasterGrid, row: usize) -> Result<f64> {
    if row >= r.height() {
        return Err(Error::RowOutOfBounds { row, height: r.height() });
    }
    let t = r.transform();
    let lat = t.origin_lat - (row as f64 + 0.5) * t.pixel_height;
    Ok(t.pixel_width * t.pixel_height * METERS_PER_DEGREE * METERS_PER_DEGREE * lat.to_radians().cos())
}
