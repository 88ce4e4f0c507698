//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    // raster model
    #[error("pixel sizes must be positive, got {width} x {height}")]
    InvalidPixelSize { width: f64, height: f64 },
    #[error("sample buffer holds {got} values, expected {expected} (width*height*bands)")]
    SampleCount { expected: usize, got: usize },
    #[error("band count must be >= 1")]
    NoBands,
    #[error("window does not intersect the raster extent")]
    EmptyIntersection,
    #[error("mosaic needs at least one input raster")]
    EmptyMosaicInput,
    #[error("mosaic inputs disagree on band count ({0} vs {1})")]
    BandCountMismatch(usize, usize),
    #[error("mosaic inputs disagree on pixel type")]
    DtypeMismatch,
    #[error("target resolution must be positive, got {0}")]
    InvalidResolution(f64),
    #[error("target window has no area")]
    EmptyTarget,
    #[error("row {row} out of bounds for raster of height {height}")]
    RowOutOfBounds { row: usize, height: usize },
    #[error("tile origin ({lon0}, {lat0}) is not a multiple of 5 degrees")]
    MisalignedTile { lon0: f64, lat0: f64 },

    // file io
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed raster header {path}: {reason}")]
    MalformedHeader { path: String, reason: String },
    #[error("unknown sample dtype {0:?} (expected uint8, uint16, or float32)")]
    UnknownDtype(String),
    #[error("payload holds {got} bytes, header declares {expected}")]
    PayloadSize { expected: usize, got: usize },
    #[error("tiff error: {0}")]
    Tiff(String),
    #[error("unsupported geotiff layout: {0}")]
    UnsupportedTiff(String),

    // calibration
    #[error("cannot compute quantiles: every sample is nodata")]
    AllNodata,

    // coregistration
    #[error("grayscale conversion needs >= 3 bands, raster has {0}")]
    TooFewBands(usize),
    #[error("raster is {width}x{height}, smaller than the 3x3 kernel")]
    KernelTooLarge { width: usize, height: usize },
    #[error("rasters are {0}x{1} and {2}x{3}, expected identical dimensions")]
    DimsMismatch(usize, usize, usize, usize),
    #[error("edge map has zero variance; correlation is undefined")]
    DegenerateCorrelation,
    #[error("shift ({dx}, {dy}) exceeds raster dimensions")]
    ShiftTooLarge { dx: i64, dy: i64 },

    // label generation
    #[error("polygon ring is not closed (first vertex must repeat as last)")]
    UnclosedRing,
    #[error("bad geojson: {0}")]
    BadGeoJson(String),
    #[error("raster is {width}x{height}, patches need at least {patch}x{patch}")]
    FrameTooSmall { width: usize, height: usize, patch: usize },
    #[error("beta must be positive, got {0}")]
    InvalidBeta(f64),

    // ensemble
    #[error("label value {0} outside the class range 0..=10")]
    LabelOutOfRange(f64),
    #[error("baseline segmenter needs exactly 4 bands, raster has {0}")]
    BandCountForSegmenter(usize),
    #[error("no segmenters given")]
    NoSegmenters,
    #[error("segmenter failures: {}", .0.join("; "))]
    SegmenterFailures(Vec<String>),
    #[error("vote threshold {threshold} outside 1..={count}")]
    InvalidVoteThreshold { threshold: usize, count: usize },
    #[error("vote stack is empty")]
    EmptyVoteStack,

    // analytics
    #[error("aggregation cell ({cell_m} m) smaller than one pixel ({pixel_m} m)")]
    CellSmallerThanPixel { cell_m: f64, pixel_m: f64 },
    #[error("area per kw-peak system must be positive, got {0}")]
    NonPositiveAp(f64),
    #[error("regression needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("regression x values are constant; slope is undefined")]
    ConstantX,
    #[error("csv error: {0}")]
    Csv(String),

    // evaluation
    #[error("cannot aggregate an empty group")]
    EmptyGroup,

    // pipeline
    #[error("config error: {0}")]
    Config(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("scene record {id}: {reason}")]
    BadSceneRecord { id: String, reason: String },
    #[error("no qualifying scene or basemap covers the cell")]
    NoQualifyingScenes,
    #[error("external segmenter exited with {status}: {cmd}")]
    SegmenterExit { cmd: String, status: String },
}

impl From<tiff::TiffError> for Error {
    fn from(e: tiff::TiffError) -> Self {
        Error::Tiff(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
