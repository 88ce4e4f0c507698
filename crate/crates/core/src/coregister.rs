//! Image/mask coregistration: grayscale + Sobel edge maps, exhaustive
//! zero-normalized cross-correlation over integer shifts, and pixel-space
//! translation. The returned shift is the move the mask needs to line up
//! with the image (positive dx east, positive dy south).

use crate::error::{Error, Result};
use crate::raster::{Dtype, RasterGrid, Samples};

pub const DEFAULT_SEARCH_WINDOW: i64 = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shift {
    pub dx: i64,
    pub dy: i64,
    pub score: f64,
}

/// Luma weights over the first three bands (R, G, B).
pub fn to_grayscale(r: &RasterGrid) -> Result<RasterGrid> {
    if r.bands() < 3 {
        return Err(Error::TooFewBands(r.bands()));
    }
    let (w, h) = (r.width(), r.height());
    let mut out = vec![0f32; w * h];
    let nd = r.nodata();
    for row in 0..h {
        for col in 0..w {
            let rgb = [r.value(0, row, col), r.value(1, row, col), r.value(2, row, col)];
            out[row * w + col] = match (rgb[0], rgb[1], rgb[2]) {
                (Some(red), Some(green), Some(blue)) => {
                    (0.299 * red + 0.587 * green + 0.114 * blue) as f32
                }
                _ => nd.unwrap_or(0.0) as f32,
            };
        }
    }
    RasterGrid::single_band(w, h, Samples::F32(out), nd, *r.transform())
}

/// Gradient magnitude from the standard 3x3 Sobel kernels, borders
/// replicate-padded. Any nodata sample in the neighborhood makes the
/// output pixel nodata.
pub fn sobel_magnitude(r: &RasterGrid) -> Result<RasterGrid> {
    if r.bands() != 1 {
        return Err(Error::BandCountMismatch(1, r.bands()));
    }
    let (w, h) = (r.width(), r.height());
    if w < 3 || h < 3 {
        return Err(Error::KernelTooLarge { width: w, height: h });
    }
    let nd = r.nodata();
    let out_nd = nd.unwrap_or(Dtype::F32.default_nodata());
    let mut out = vec![0f32; w * h];
    let mut any_nodata = false;
    for row in 0..h {
        for col in 0..w {
            // replicate padding via clamped neighbor indices
            let at = |dr: i64, dc: i64| -> Option<f64> {
                let rr = (row as i64 + dr).clamp(0, h as i64 - 1) as usize;
                let cc = (col as i64 + dc).clamp(0, w as i64 - 1) as usize;
                r.value(0, rr, cc)
            };
            let mut window = [[0f64; 3]; 3];
            let mut valid = true;
            for (wr, dr) in (-1i64..=1).enumerate() {
                for (wc, dc) in (-1i64..=1).enumerate() {
                    match at(dr, dc) {
                        Some(v) => window[wr][wc] = v,
                        None => valid = false,
                    }
                }
            }
            if !valid {
                out[row * w + col] = out_nd as f32;
                any_nodata = true;
                continue;
            }
            let gx = (window[0][2] + 2.0 * window[1][2] + window[2][2])
                - (window[0][0] + 2.0 * window[1][0] + window[2][0]);
            let gy = (window[2][0] + 2.0 * window[2][1] + window[2][2])
                - (window[0][0] + 2.0 * window[0][1] + window[0][2]);
            out[row * w + col] = (gx * gx + gy * gy).sqrt() as f32;
        }
    }
    let out_nodata = if nd.is_some() || any_nodata { Some(out_nd) } else { None };
    RasterGrid::single_band(w, h, Samples::F32(out), out_nodata, *r.transform())
}

/// Grayscale (when the raster carries color bands) followed by Sobel.
pub fn edge_map(r: &RasterGrid) -> Result<RasterGrid> {
    match r.bands() {
        1 => sobel_magnitude(r),
        2 => Err(Error::TooFewBands(2)),
        _ => sobel_magnitude(&to_grayscale(r)?),
    }
}

/// Zero-normalized correlation between `img` and `mask` translated by
/// (dx, dy), over the in-bounds pixels valid in both. None when the
/// overlap is empty or either side is flat there.
fn zncc_at(img: &RasterGrid, mask: &RasterGrid, dx: i64, dy: i64) -> Option<f64> {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for row in 0..h {
        for col in 0..w {
            let (mr, mc) = (row - dy, col - dx);
            if mr < 0 || mc < 0 || mr >= h || mc >= w {
                continue;
            }
            let a = img.value(0, row as usize, col as usize);
            let b = mask.value(0, mr as usize, mc as usize);
            if let (Some(a), Some(b)) = (a, b) {
                pairs.push((a, b));
            }
        }
    }
    if pairs.is_empty() {
        return None;
    }
    let n = pairs.len() as f64;
    let mean_a = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_b = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut cov, mut var_a, mut var_b) = (0.0, 0.0, 0.0);
    for (a, b) in &pairs {
        let (da, db) = (a - mean_a, b - mean_b);
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return None;
    }
    Some((cov / (var_a.sqrt() * var_b.sqrt())).clamp(-1.0, 1.0))
}

fn has_variance(r: &RasterGrid) -> bool {
    let mut first: Option<f64> = None;
    for row in 0..r.height() {
        for col in 0..r.width() {
            if let Some(v) = r.value(0, row, col) {
                match first {
                    None => first = Some(v),
                    Some(f) if f != v => return true,
                    _ => {}
                }
            }
        }
    }
    false
}

/// Exhaustive integer-shift search for the translation the mask must make
/// to align with the image. Ties break toward the smallest |dx|+|dy|,
/// then the smallest dy, then dx.
pub fn estimate_shift(img: &RasterGrid, mask: &RasterGrid, window: i64) -> Result<Shift> {
    if img.width() != mask.width() || img.height() != mask.height() {
        return Err(Error::DimsMismatch(img.width(), img.height(), mask.width(), mask.height()));
    }
    if !has_variance(img) || !has_variance(mask) {
        return Err(Error::DegenerateCorrelation);
    }
    let mut best: Option<Shift> = None;
    for dy in -window..=window {
        for dx in -window..=window {
            let score = match zncc_at(img, mask, dx, dy) {
                Some(s) => s,
                None => continue,
            };
            let candidate = Shift { dx, dy, score };
            best = Some(match best {
                None => candidate,
                Some(b) => {
                    let cand_key = (dx.abs() + dy.abs(), dy, dx);
                    let best_key = (b.dx.abs() + b.dy.abs(), b.dy, b.dx);
                    if score > b.score || (score == b.score && cand_key < best_key) {
                        candidate
                    } else {
                        b
                    }
                }
            });
        }
    }
    best.ok_or(Error::DegenerateCorrelation)
}

/// Translates content by (dx, dy): positive dx moves it east, positive dy
/// south. Vacated pixels become nodata; the geotransform is untouched
/// because alignment lives in pixel space.
pub fn apply_shift(r: &RasterGrid, s: &Shift) -> Result<RasterGrid> {
    let (w, h) = (r.width() as i64, r.height() as i64);
    if s.dx.abs() >= w || s.dy.abs() >= h {
        return Err(Error::ShiftTooLarge { dx: s.dx, dy: s.dy });
    }
    let nd = r.nodata().unwrap_or_else(|| r.dtype().default_nodata());
    let mut out = RasterGrid::filled(
        r.width(),
        r.height(),
        r.bands(),
        r.dtype(),
        nd,
        Some(nd),
        *r.transform(),
    )?;
    for b in 0..r.bands() {
        for row in 0..h {
            for col in 0..w {
                let (sr, sc) = (row - s.dy, col - s.dx);
                if sr < 0 || sc < 0 || sr >= h || sc >= w {
                    continue;
                }
                out.set(b, row as usize, col as usize, r.get(b, sr as usize, sc as usize));
            }
        }
    }
    Ok(out)
}
