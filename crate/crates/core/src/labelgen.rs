//! Training-target generation: exact signed Euclidean distances between
//! pixel centers, truncation and binning into the 11-class label scale,
//! and deterministic 256x256 patch cutting with an 80/20 split.

use crate::calibrate::PATCH_SIZE;
use crate::error::{Error, Result};
use crate::raster::{GeoTransform, RasterGrid, Samples};

/// Distance truncation threshold, pixels.
pub const DEFAULT_BETA: f64 = 10.0;

/// Center label of the 11-class scale; labels above it mean building.
pub const NEUTRAL_LABEL: u8 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
        }
    }
}

#[derive(Debug, Clone)]
pub struct PatchPair {
    pub patch_id: String,
    /// Pixel offsets of the patch origin in the source frame.
    pub row: usize,
    pub col: usize,
    pub image: RasterGrid,
    pub labels: RasterGrid,
    pub split: Split,
}

// ── signed distance ─────────────────────────────────────────────────────

const INF: u64 = u64::MAX / 4;

/// Squared Euclidean distance from every pixel to the nearest site pixel
/// (`site[i] = true`), exact in integer arithmetic. Pixels with no site
/// anywhere get INF.
fn squared_edt(site: &[bool], width: usize, height: usize) -> Vec<u64> {
    // pass 1: per column, distance in rows to the nearest site
    let mut vert = vec![INF; width * height];
    for col in 0..width {
        let mut last: Option<usize> = None;
        for row in 0..height {
            if site[row * width + col] {
                last = Some(row);
            }
            if let Some(s) = last {
                vert[row * width + col] = (row - s) as u64;
            }
        }
        last = None;
        for row in (0..height).rev() {
            if site[row * width + col] {
                last = Some(row);
            }
            if let Some(s) = last {
                let d = (s - row) as u64;
                let idx = row * width + col;
                if d < vert[idx] {
                    vert[idx] = d;
                }
            }
        }
    }
    // pass 2: per row, combine column offsets with the vertical distances,
    // scanning candidates outward so the dc^2 bound prunes early
    let mut out = vec![INF; width * height];
    for row in 0..height {
        let base = row * width;
        for col in 0..width {
            let mut best = if vert[base + col] == INF {
                INF
            } else {
                vert[base + col] * vert[base + col]
            };
            for dc in 1..width as i64 {
                let dc2 = (dc * dc) as u64;
                if dc2 >= best {
                    break;
                }
                for cc in [col as i64 - dc, col as i64 + dc] {
                    if cc < 0 || cc >= width as i64 {
                        continue;
                    }
                    let v = vert[base + cc as usize];
                    if v == INF {
                        continue;
                    }
                    let cand = v * v + dc2;
                    if cand < best {
                        best = cand;
                    }
                }
            }
            out[base + col] = best;
        }
    }
    out
}

/// Signed distance field of a binary mask: positive inside buildings
/// (distance to the nearest background pixel), negative outside (distance
/// to the nearest building pixel). Single-class masks saturate at
/// +-(width+height).
pub fn signed_distance(mask: &RasterGrid) -> Result<RasterGrid> {
    let (w, h) = (mask.width(), mask.height());
    let building: Vec<bool> = (0..w * h)
        .map(|i| mask.samples().get(i) != 0.0)
        .collect();
    let background: Vec<bool> = building.iter().map(|b| !b).collect();
    let to_background = squared_edt(&background, w, h);
    let to_building = squared_edt(&building, w, h);

    let saturation = (w + h) as f64;
    let mut out = vec![0f32; w * h];
    for i in 0..w * h {
        let (sq, sign) =
            if building[i] { (to_background[i], 1.0) } else { (to_building[i], -1.0) };
        out[i] = if sq >= INF {
            (sign * saturation) as f32
        } else {
            (sign * (sq as f64).sqrt()) as f32
        };
    }
    RasterGrid::single_band(w, h, Samples::F32(out), None, *mask.transform())
}

// ── binning ─────────────────────────────────────────────────────────────

/// Label for one signed distance: truncate at beta, bin at width 2, and
/// offset around the neutral class. Zero distance is the neutral class.
pub fn bin_distance(d: f64, beta: f64) -> u8 {
    let magnitude = (d.abs().min(beta) / 2.0).ceil() as i64;
    let label = NEUTRAL_LABEL as i64 + d.signum() as i64 * magnitude;
    label as u8
}

/// Truncates a signed-distance raster at `beta` and bins it into the
/// 11-class u8 label scale.
pub fn truncate_and_bin(d: &RasterGrid, beta: f64) -> Result<RasterGrid> {
    if !(beta > 0.0 && beta <= 10.0) {
        return Err(Error::InvalidBeta(beta));
    }
    let (w, h) = (d.width(), d.height());
    let mut out = vec![0u8; w * h];
    for i in 0..w * h {
        out[i] = bin_distance(d.samples().get(i), beta);
    }
    RasterGrid::single_band(w, h, Samples::U8(out), None, *d.transform())
}

// ── patch cutting ───────────────────────────────────────────────────────

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Pixel-space crop with the transform shifted to match.
fn pixel_crop(r: &RasterGrid, row0: usize, col0: usize, h: usize, w: usize) -> RasterGrid {
    let t = r.transform();
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
    RasterGrid::new(w, h, r.bands(), samples, r.nodata(), transform).expect("crop dims are valid")
}

/// Cuts aligned image/label pairs on the non-overlapping 256x256 lattice
/// (residual margins dropped) and assigns a seeded 80/20 train/validation
/// split. Ranking patches by a per-index hash keeps the assignment
/// deterministic and the train count within one patch of 80%.
pub fn cut_patches(image: &RasterGrid, labels: &RasterGrid, seed: u64) -> Result<Vec<PatchPair>> {
    if image.width() != labels.width() || image.height() != labels.height() {
        return Err(Error::DimsMismatch(
            image.width(),
            image.height(),
            labels.width(),
            labels.height(),
        ));
    }
    if image.width() < PATCH_SIZE || image.height() < PATCH_SIZE {
        return Err(Error::FrameTooSmall {
            width: image.width(),
            height: image.height(),
            patch: PATCH_SIZE,
        });
    }
    let rows = image.height() / PATCH_SIZE;
    let cols = image.width() / PATCH_SIZE;
    let n = rows * cols;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&idx| (splitmix64(seed ^ splitmix64(idx as u64 + 1)), idx));
    let train_count = (0.8 * n as f64).round() as usize;
    let mut split = vec![Split::Validation; n];
    for &idx in order.iter().take(train_count) {
        split[idx] = Split::Train;
    }

    let mut pairs = Vec::with_capacity(n);
    for pr in 0..rows {
        for pc in 0..cols {
            let idx = pr * cols + pc;
            let (row0, col0) = (pr * PATCH_SIZE, pc * PATCH_SIZE);
            pairs.push(PatchPair {
                patch_id: format!("p{pr}_{pc}"),
                row: row0,
                col: col0,
                image: pixel_crop(image, row0, col0, PATCH_SIZE, PATCH_SIZE),
                labels: pixel_crop(labels, row0, col0, PATCH_SIZE, PATCH_SIZE),
                split: split[idx],
            });
        }
    }
    Ok(pairs)
}
