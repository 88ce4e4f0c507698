//! Robust radiometric calibration: per-band IQR statistics, clipping to
//! [0, Q3 + 1.5*IQR], and normalization to the unit interval. Statistics
//! come from the whole raster (per-scope) or from each 256x256 patch of
//! the labeling lattice (per-patch).

use crate::error::{Error, Result};
use crate::raster::{Dtype, RasterGrid, Samples};

/// Patch edge length shared with the label patch lattice.
pub const PATCH_SIZE: usize = 256;

/// Nodata sentinel for calibrated float output.
pub const CALIBRATED_NODATA: f64 = -9999.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandStats {
    pub q1: f64,
    pub q3: f64,
}

impl BandStats {
    pub const CLIP_LO: f64 = 0.0;

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }

    pub fn clip_hi(&self) -> f64 {
        self.q3 + 1.5 * self.iqr()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalibrationMode {
    PerScope,
    PerPatch,
}

impl CalibrationMode {
    pub fn parse(s: &str) -> Result<CalibrationMode> {
        match s {
            "per-scope" => Ok(CalibrationMode::PerScope),
            "per-patch" => Ok(CalibrationMode::PerPatch),
            other => Err(Error::Config(format!("unknown calibration mode {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CalibrationMode::PerScope => "per-scope",
            CalibrationMode::PerPatch => "per-patch",
        }
    }
}

/// Quantile by sorting and linear interpolation at fractional rank
/// p*(n-1). `sorted` must be ascending and non-empty.
fn interpolated_quantile(sorted: &[f64], p: f64) -> f64 {
    let rank = p * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// IQR statistics of a list of valid (non-nodata) samples.
pub fn band_quantiles(samples: &[f64]) -> Result<BandStats> {
    if samples.is_empty() {
        return Err(Error::AllNodata);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    Ok(BandStats {
        q1: interpolated_quantile(&sorted, 0.25),
        q3: interpolated_quantile(&sorted, 0.75),
    })
}

#[inline]
fn apply(value: f64, clip_hi: f64) -> f64 {
    if clip_hi == 0.0 {
        return 0.0;
    }
    value.clamp(BandStats::CLIP_LO, clip_hi) / clip_hi
}

/// Calibrates every band of `r` to float32 in [0,1]. Nodata samples are
/// excluded from statistics and come out as the float nodata sentinel.
/// Regions with no valid samples at all stay wholly nodata; statistics
/// are never computed for them.
pub fn calibrate(r: &RasterGrid, mode: CalibrationMode) -> Result<RasterGrid> {
    let (w, h, bands) = (r.width(), r.height(), r.bands());
    let nodata = r.nodata().map(|_| CALIBRATED_NODATA);
    let mut out = vec![0f32; w * h * bands];

    match mode {
        CalibrationMode::PerScope => {
            for b in 0..bands {
                calibrate_region(r, b, 0..h, 0..w, &mut out)?;
            }
        }
        CalibrationMode::PerPatch => {
            let patch_rows = h.div_ceil(PATCH_SIZE);
            let patch_cols = w.div_ceil(PATCH_SIZE);
            for b in 0..bands {
                for pr in 0..patch_rows {
                    for pc in 0..patch_cols {
                        let rows = pr * PATCH_SIZE..((pr + 1) * PATCH_SIZE).min(h);
                        let cols = pc * PATCH_SIZE..((pc + 1) * PATCH_SIZE).min(w);
                        calibrate_region(r, b, rows, cols, &mut out)?;
                    }
                }
            }
        }
    }

    RasterGrid::new(w, h, bands, Samples::F32(out), nodata, *r.transform())
}

fn calibrate_region(
    r: &RasterGrid,
    band: usize,
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
    out: &mut [f32],
) -> Result<()> {
    let (w, h) = (r.width(), r.height());
    let mut valid = Vec::with_capacity(rows.len() * cols.len());
    for row in rows.clone() {
        for col in cols.clone() {
            if let Some(v) = r.value(band, row, col) {
                valid.push(v);
            }
        }
    }
    let stats = if valid.is_empty() { None } else { Some(band_quantiles(&valid)?) };
    for row in rows {
        for col in cols.clone() {
            let idx = band * w * h + row * w + col;
            out[idx] = match (r.value(band, row, col), stats) {
                (Some(v), Some(s)) => apply(v, s.clip_hi()) as f32,
                _ => CALIBRATED_NODATA as f32,
            };
        }
    }
    Ok(())
}

/// True when the raster looks like calibration output: float samples with
/// every valid value inside the unit interval.
pub fn is_calibrated(r: &RasterGrid) -> bool {
    if r.dtype() != Dtype::F32 {
        return false;
    }
    for b in 0..r.bands() {
        for row in 0..r.height() {
            for col in 0..r.width() {
                if let Some(v) = r.value(b, row, col) {
                    if !(0.0..=1.0).contains(&v) {
                        return false;
                    }
                }
            }
        }
    }
    true
}
