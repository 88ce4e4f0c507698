//! Segmentation ensemble: a pluggable segmenter abstraction (built-in
//! spectral baseline or external process), label binarization, and
//! majority voting across aligned masks.

use std::process::Command;

use crate::error::{Error, Result};
use crate::io;
use crate::raster::{RasterGrid, Samples};

/// Nodata sentinel for u8 label and mask rasters.
pub const MASK_NODATA: f64 = 255.0;

/// Default minimum positive votes for a building pixel.
pub const DEFAULT_VOTE_THRESHOLD: usize = 2;

const NDVI_THRESHOLD: f64 = 0.2;
const BRIGHTNESS_THRESHOLD: f64 = 0.15;
const NDVI_EPS: f64 = 1e-6;

/// Class emitted by the baseline for built pixels; anything above the
/// neutral class binarizes to building.
const BUILT_CLASS: f64 = 8.0;
const NOT_BUILT_CLASS: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segmenter {
    Baseline,
    /// Invoked as `<cmd> <input-raster> <output-raster>`; the command
    /// string is split on whitespace, extra tokens become leading args.
    External { cmd: String },
}

impl Segmenter {
    pub fn parse(spec: &str) -> Result<Segmenter> {
        if spec == "baseline" {
            return Ok(Segmenter::Baseline);
        }
        if let Some(cmd) = spec.strip_prefix("exec:") {
            if cmd.trim().is_empty() {
                return Err(Error::Config("empty exec segmenter command".into()));
            }
            return Ok(Segmenter::External { cmd: cmd.to_string() });
        }
        Err(Error::Config(format!("unknown segmenter spec {spec:?}")))
    }

    pub fn id(&self) -> &str {
        match self {
            Segmenter::Baseline => "baseline",
            Segmenter::External { .. } => "exec",
        }
    }

    pub fn spec_string(&self) -> String {
        match self {
            Segmenter::Baseline => "baseline".into(),
            Segmenter::External { cmd } => format!("exec:{cmd}"),
        }
    }
}

/// Spectral-rule stand-in for a trained model: a pixel is built when its
/// NDVI is low and its visible brightness is high. Requires the 4-band
/// (R, G, B, NIR) calibrated layout.
pub fn baseline_segment(img: &RasterGrid) -> Result<RasterGrid> {
    if img.bands() != 4 {
        return Err(Error::BandCountForSegmenter(img.bands()));
    }
    let (w, h) = (img.width(), img.height());
    let mut out = vec![0u8; w * h];
    for row in 0..h {
        for col in 0..w {
            let bands = [
                img.value(0, row, col),
                img.value(1, row, col),
                img.value(2, row, col),
                img.value(3, row, col),
            ];
            out[row * w + col] = match bands {
                [Some(r), Some(g), Some(b), Some(nir)] => {
                    let ndvi = (nir - r) / (nir + r + NDVI_EPS);
                    let brightness = (r + g + b) / 3.0;
                    if ndvi < NDVI_THRESHOLD && brightness > BRIGHTNESS_THRESHOLD {
                        BUILT_CLASS as u8
                    } else {
                        NOT_BUILT_CLASS as u8
                    }
                }
                _ => MASK_NODATA as u8,
            };
        }
    }
    RasterGrid::single_band(w, h, Samples::U8(out), Some(MASK_NODATA), *img.transform())
}

fn run_external(cmd: &str, img: &RasterGrid) -> std::result::Result<RasterGrid, String> {
    let dir = tempfile::tempdir().map_err(|e| format!("tempdir: {e}"))?;
    let input = dir.path().join("input.tif");
    let output = dir.path().join("output.tif");
    io::write_raster(&input, img).map_err(|e| format!("write input: {e}"))?;

    let mut tokens = cmd.split_whitespace();
    let program = tokens.next().ok_or_else(|| "empty command".to_string())?;
    let status = Command::new(program)
        .args(tokens)
        .arg(&input)
        .arg(&output)
        .status()
        .map_err(|e| format!("spawn {program:?}: {e}"))?;
    if !status.success() {
        return Err(Error::SegmenterExit {
            cmd: cmd.to_string(),
            status: status.code().unwrap_or(-1).to_string(),
        }
        .to_string());
    }
    let labels = io::read_raster(&output).map_err(|e| format!("read output: {e}"))?;
    if labels.width() != img.width() || labels.height() != img.height() {
        return Err(format!(
            "output dims {}x{} do not match input {}x{}",
            labels.width(),
            labels.height(),
            img.width(),
            img.height()
        ));
    }
    if labels.bands() != 1 {
        return Err(format!("output has {} bands, expected 1", labels.bands()));
    }
    Ok(labels)
}

/// Runs every segmenter on the image, order-preserving. Failures are
/// collected per segmenter and reported together so one broken external
/// process names itself without hiding the others.
pub fn run_segmenters(img: &RasterGrid, segmenters: &[Segmenter]) -> Result<Vec<RasterGrid>> {
    if segmenters.is_empty() {
        return Err(Error::NoSegmenters);
    }
    let mut outputs = Vec::with_capacity(segmenters.len());
    let mut failures = Vec::new();
    for (i, seg) in segmenters.iter().enumerate() {
        let result = match seg {
            Segmenter::Baseline => baseline_segment(img).map_err(|e| e.to_string()),
            Segmenter::External { cmd } => run_external(cmd, img),
        };
        match result {
            Ok(r) => outputs.push(r),
            Err(e) => failures.push(format!("segmenter {i} ({}): {e}", seg.id())),
        }
    }
    if !failures.is_empty() {
        return Err(Error::SegmenterFailures(failures));
    }
    Ok(outputs)
}

/// Collapses an 11-class label raster to a binary building mask: 1 iff
/// the class is strictly above the neutral class. Nodata passes through.
pub fn binarize(labels: &RasterGrid) -> Result<RasterGrid> {
    if labels.bands() != 1 {
        return Err(Error::BandCountMismatch(1, labels.bands()));
    }
    let (w, h) = (labels.width(), labels.height());
    let mut out = vec![0u8; w * h];
    for row in 0..h {
        for col in 0..w {
            out[row * w + col] = match labels.value(0, row, col) {
                None => MASK_NODATA as u8,
                Some(v) => {
                    if v.fract() != 0.0 || !(0.0..=10.0).contains(&v) {
                        return Err(Error::LabelOutOfRange(v));
                    }
                    u8::from(v > 5.0)
                }
            };
        }
    }
    let nodata = labels.nodata().map(|_| MASK_NODATA);
    RasterGrid::single_band(w, h, Samples::U8(out), nodata, *labels.transform())
}

/// Majority vote over aligned binary masks. Nodata votes abstain; the
/// threshold stays absolute among the remaining votes; a pixel where all
/// masks abstain is nodata.
pub fn majority_vote(masks: &[&RasterGrid], threshold: usize) -> Result<RasterGrid> {
    let first = *masks.first().ok_or(Error::EmptyVoteStack)?;
    if threshold < 1 || threshold > masks.len() {
        return Err(Error::InvalidVoteThreshold { threshold, count: masks.len() });
    }
    for m in masks {
        if m.width() != first.width() || m.height() != first.height() {
            return Err(Error::DimsMismatch(first.width(), first.height(), m.width(), m.height()));
        }
        if m.transform() != first.transform() {
            return Err(Error::DimsMismatch(first.width(), first.height(), m.width(), m.height()));
        }
    }
    let (w, h) = (first.width(), first.height());
    let mut out = vec![0u8; w * h];
    for row in 0..h {
        for col in 0..w {
            let mut positives = 0usize;
            let mut valid = 0usize;
            for m in masks {
                if let Some(v) = m.value(0, row, col) {
                    valid += 1;
                    if v != 0.0 {
                        positives += 1;
                    }
                }
            }
            out[row * w + col] = if valid == 0 {
                MASK_NODATA as u8
            } else {
                u8::from(positives >= threshold)
            };
        }
    }
    RasterGrid::single_band(w, h, Samples::U8(out), Some(MASK_NODATA), *first.transform())
}
