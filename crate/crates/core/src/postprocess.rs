//! Area-aware false-positive filtering: building pixels are struck where
//! the land-cover layer contradicts them, with a weak rule inside urban
//! settlements and a strict impervious-only rule outside them.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{RasterGrid, Samples};

pub mod landcover {
    pub const CROPLAND: u8 = 1;
    pub const FOREST: u8 = 2;
    pub const GRASS: u8 = 3;
    pub const SHRUB: u8 = 4;
    pub const WATER: u8 = 5;
    pub const IMPERVIOUS: u8 = 6;
    pub const BARE: u8 = 7;
    pub const SNOW: u8 = 8;
    pub const CLOUD: u8 = 9;
}

/// Filter class sets, overridable from configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterRules {
    /// Urban pixels: building removed when land cover is one of these.
    pub urban_remove: BTreeSet<u8>,
    /// Non-urban pixels: building kept only when land cover is one of
    /// these.
    pub nonurban_keep: BTreeSet<u8>,
}

impl Default for FilterRules {
    fn default() -> Self {
        FilterRules {
            urban_remove: [landcover::CROPLAND, landcover::GRASS, landcover::SHRUB].into(),
            nonurban_keep: [landcover::IMPERVIOUS].into(),
        }
    }
}

/// Nearest-neighbor resample of `src` onto the grid of `reference`.
/// Reference pixels whose centers fall outside `src` become nodata.
pub fn align_to(src: &RasterGrid, reference: &RasterGrid) -> Result<RasterGrid> {
    let (w, h) = (reference.width(), reference.height());
    let nd = src.nodata().unwrap_or_else(|| src.dtype().default_nodata());
    let mut out = RasterGrid::filled(
        w,
        h,
        src.bands(),
        src.dtype(),
        nd,
        Some(nd),
        *reference.transform(),
    )?;
    for row in 0..h {
        for col in 0..w {
            let (lon, lat) = reference.transform().pixel_center(row, col);
            let (sr, sc) = src.transform().pixel_of(lon, lat);
            if sr < 0 || sc < 0 || sr as usize >= src.height() || sc as usize >= src.width() {
                continue;
            }
            for b in 0..src.bands() {
                out.set(b, row, col, src.get(b, sr as usize, sc as usize));
            }
        }
    }
    Ok(out)
}

fn check_aligned(a: &RasterGrid, b: &RasterGrid) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() || a.transform() != b.transform() {
        return Err(Error::DimsMismatch(a.width(), a.height(), b.width(), b.height()));
    }
    Ok(())
}

/// Strikes building pixels contradicted by land cover. Urban pixels use
/// the weak remove-set; everything else (including urban-nodata) must sit
/// on a keep-set class. Nodata land cover never removes anything, and
/// non-building pixels are untouched.
pub fn area_aware_filter(
    buildings: &RasterGrid,
    urban: &RasterGrid,
    lc: &RasterGrid,
    rules: &FilterRules,
) -> Result<RasterGrid> {
    check_aligned(buildings, urban)?;
    check_aligned(buildings, lc)?;
    let (w, h) = (buildings.width(), buildings.height());
    let mut out = vec![0u8; w * h];
    for row in 0..h {
        for col in 0..w {
            let building = buildings.value(0, row, col);
            out[row * w + col] = match building {
                None => crate::ensemble::MASK_NODATA as u8,
                Some(v) if v == 0.0 => 0,
                Some(_) => {
                    let cover = lc.value(0, row, col).map(|c| c as u8);
                    let is_urban = urban.value(0, row, col) == Some(1.0);
                    let keep = match cover {
                        None => true,
                        Some(c) => {
                            if is_urban {
                                !rules.urban_remove.contains(&c)
                            } else {
                                rules.nonurban_keep.contains(&c)
                            }
                        }
                    };
                    u8::from(keep)
                }
            };
        }
    }
    RasterGrid::single_band(w, h, Samples::U8(out), buildings.nodata(), *buildings.transform())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::MASK_NODATA;
    use crate::raster::{Dtype, GeoTransform};

    fn t() -> GeoTransform {
        GeoTransform::new(0.0, 1.0, 0.001, 0.001).unwrap()
    }

    fn single(value: u8, nodata: Option<f64>) -> RasterGrid {
        RasterGrid::single_band(1, 1, Samples::U8(vec![value]), nodata, t()).unwrap()
    }

    fn run_one(building: u8, urban: u8, cover: Option<u8>) -> f64 {
        let b = single(building, Some(MASK_NODATA));
        let u = single(urban, Some(MASK_NODATA));
        let l = single(cover.unwrap_or(0), cover.map_or(Some(0.0), |_| Some(0.0)));
        // land-cover nodata is encoded as 0 with nodata=0
        let out = area_aware_filter(&b, &u, &l, &FilterRules::default()).unwrap();
        out.get(0, 0, 0)
    }

    #[test]
    fn spec_examples() {
        assert_eq!(run_one(1, 1, Some(landcover::CROPLAND)), 0.0);
        assert_eq!(run_one(1, 1, Some(landcover::FOREST)), 1.0);
        assert_eq!(run_one(1, 0, Some(landcover::IMPERVIOUS)), 1.0);
        assert_eq!(run_one(1, 0, Some(landcover::WATER)), 0.0);
    }

    #[test]
    fn exhaustive_rule_table() {
        let urban_kept = [2u8, 5, 6, 7, 8, 9];
        for urban in [0u8, 1] {
            for cover in (1u8..=9).map(Some).chain([None]) {
                let got = run_one(1, urban, cover);
                let expect = match (urban, cover) {
                    (_, None) => 1.0,
                    (1, Some(c)) => f64::from(urban_kept.contains(&c)),
                    (0, Some(c)) => f64::from(c == landcover::IMPERVIOUS),
                    _ => unreachable!(),
                };
                assert_eq!(got, expect, "urban={urban} cover={cover:?}");
            }
        }
    }

    #[test]
    fn non_building_pixels_never_flip() {
        for urban in [0u8, 1] {
            for cover in 1u8..=9 {
                assert_eq!(run_one(0, urban, Some(cover)), 0.0);
            }
        }
    }

    #[test]
    fn urban_nodata_falls_back_to_the_strict_rule() {
        assert_eq!(run_one(1, MASK_NODATA as u8, Some(landcover::FOREST)), 0.0);
        assert_eq!(run_one(1, MASK_NODATA as u8, Some(landcover::IMPERVIOUS)), 1.0);
    }

    #[test]
    fn building_nodata_propagates() {
        let b = single(MASK_NODATA as u8, Some(MASK_NODATA));
        let u = single(1, None);
        let l = single(landcover::IMPERVIOUS, None);
        let out = area_aware_filter(&b, &u, &l, &FilterRules::default()).unwrap();
        assert!(!out.pixel_valid(0, 0));
    }

    fn world(n: usize) -> (RasterGrid, RasterGrid, RasterGrid) {
        let mut b = vec![0u8; n * n];
        let mut u = vec![0u8; n * n];
        let mut l = vec![0u8; n * n];
        let mut state = 7u64;
        for i in 0..n * n {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            b[i] = ((state >> 33) % 2) as u8;
            u[i] = ((state >> 13) % 2) as u8;
            l[i] = ((state >> 23) % 9 + 1) as u8;
        }
        (
            RasterGrid::single_band(n, n, Samples::U8(b), Some(MASK_NODATA), t()).unwrap(),
            RasterGrid::single_band(n, n, Samples::U8(u), None, t()).unwrap(),
            RasterGrid::single_band(n, n, Samples::U8(l), None, t()).unwrap(),
        )
    }

    #[test]
    fn filter_is_anti_extensive_and_idempotent() {
        let (b, u, l) = world(24);
        let rules = FilterRules::default();
        let once = area_aware_filter(&b, &u, &l, &rules).unwrap();
        for i in 0..24 * 24 {
            assert!(once.samples().get(i) <= b.samples().get(i));
        }
        let twice = area_aware_filter(&once, &u, &l, &rules).unwrap();
        assert_eq!(twice.samples(), once.samples());
    }

    #[test]
    fn custom_rules_override_the_class_sets() {
        let rules = FilterRules {
            urban_remove: [landcover::FOREST].into(),
            nonurban_keep: [landcover::BARE, landcover::IMPERVIOUS].into(),
        };
        let b = single(1, None);
        let u = single(1, None);
        let l = single(landcover::CROPLAND, None);
        // cropland no longer removes in urban areas under the override
        assert_eq!(area_aware_filter(&b, &u, &l, &rules).unwrap().get(0, 0, 0), 1.0);
        let u0 = single(0, None);
        let lb = single(landcover::BARE, None);
        assert_eq!(area_aware_filter(&b, &u0, &lb, &rules).unwrap().get(0, 0, 0), 1.0);
    }

    #[test]
    fn misaligned_inputs_are_rejected() {
        let b = single(1, None);
        let u = RasterGrid::filled(2, 1, 1, Dtype::U8, 0.0, None, t()).unwrap();
        let l = single(1, None);
        assert!(matches!(
            area_aware_filter(&b, &u, &l, &FilterRules::default()),
            Err(Error::DimsMismatch(..))
        ));
    }

    #[test]
    fn align_to_resamples_nearest_neighbor() {
        // coarse 2x2 source at 2 deg/px, fine 4x4 reference at 1 deg/px
        let coarse_t = GeoTransform::new(0.0, 4.0, 2.0, 2.0).unwrap();
        let fine_t = GeoTransform::new(0.0, 4.0, 1.0, 1.0).unwrap();
        let src =
            RasterGrid::single_band(2, 2, Samples::U8(vec![1, 2, 3, 4]), None, coarse_t).unwrap();
        let reference = RasterGrid::filled(4, 4, 1, Dtype::U8, 0.0, None, fine_t).unwrap();
        let aligned = align_to(&src, &reference).unwrap();
        for row in 0..4 {
            for col in 0..4 {
                let expect = src.get(0, row / 2, col / 2);
                assert_eq!(aligned.get(0, row, col), expect);
            }
        }
    }

    #[test]
    fn align_to_marks_uncovered_pixels_nodata() {
        let src_t = GeoTransform::new(0.0, 1.0, 1.0, 1.0).unwrap();
        let ref_t = GeoTransform::new(0.0, 2.0, 1.0, 1.0).unwrap();
        let src = RasterGrid::single_band(1, 1, Samples::U8(vec![9]), None, src_t).unwrap();
        let reference = RasterGrid::filled(2, 2, 1, Dtype::U8, 0.0, None, ref_t).unwrap();
        let aligned = align_to(&src, &reference).unwrap();
        assert!(!aligned.pixel_valid(0, 0));
        assert_eq!(aligned.get(0, 1, 0), 9.0);
    }
}
