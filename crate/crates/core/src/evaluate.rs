//! Mask scoring: confusion matrices, F1 and IoU, and grouped aggregation
//! over patches, cities, continents, and the whole run.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::RasterGrid;

/// 2x2 pixel-count table. `fn_` is the false-negative count.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn add(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Counts agreement between two binary masks; pixels that are nodata on
/// either side are excluded.
pub fn confusion(pred: &RasterGrid, reference: &RasterGrid) -> Result<Confusion> {
    if pred.width() != reference.width() || pred.height() != reference.height() {
        return Err(Error::DimsMismatch(
            pred.width(),
            pred.height(),
            reference.width(),
            reference.height(),
        ));
    }
    let mut c = Confusion::default();
    for row in 0..pred.height() {
        for col in 0..pred.width() {
            let (Some(p), Some(r)) =
                (pred.value(0, row, col), reference.value(0, row, col))
            else {
                continue;
            };
            match (p != 0.0, r != 0.0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
    }
    Ok(c)
}

/// F1 and IoU, or None when no positives exist on either side so both
/// are undefined.
pub fn f1_iou(c: &Confusion) -> Option<(f64, f64)> {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if c.tp + c.fp + c.fn_ == 0 {
        return None;
    }
    let f1 = 2.0 * c.tp as f64 / denom as f64;
    let iou = c.tp as f64 / (c.tp + c.fp + c.fn_) as f64;
    Some((f1, iou))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    /// Sum confusions over the group, then score the sum. The default.
    Micro,
    /// Mean of per-patch scores, skipping undefined patches.
    Macro,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub scope: String,
    pub scope_id: String,
    pub n_patches: usize,
    pub f1: Option<f64>,
    pub iou: Option<f64>,
}

/// patch_id -> (city, continent)
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroupTable {
    pub rows: BTreeMap<String, (String, String)>,
}

pub fn read_groups_csv(path: &Path) -> Result<GroupTable> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Csv(e.to_string()))?;
    let headers: Vec<&str> =
        reader.headers().map_err(|e| Error::Csv(e.to_string()))?.iter().collect();
    if headers != ["patch_id", "city", "continent"] {
        return Err(Error::Csv(format!("unexpected groups header {headers:?}")));
    }
    let mut rows = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Csv(e.to_string()))?;
        rows.insert(
            record.get(0).unwrap_or("").to_string(),
            (record.get(1).unwrap_or("").to_string(), record.get(2).unwrap_or("").to_string()),
        );
    }
    Ok(GroupTable { rows })
}

fn score_group(members: &[&Confusion], mode: Aggregation) -> (Option<f64>, Option<f64>) {
    match mode {
        Aggregation::Micro => {
            let mut sum = Confusion::default();
            for c in members {
                sum.add(c);
            }
            match f1_iou(&sum) {
                Some((f1, iou)) => (Some(f1), Some(iou)),
                None => (None, None),
            }
        }
        Aggregation::Macro => {
            let defined: Vec<(f64, f64)> = members.iter().filter_map(|c| f1_iou(c)).collect();
            if defined.is_empty() {
                (None, None)
            } else {
                let n = defined.len() as f64;
                (
                    Some(defined.iter().map(|s| s.0).sum::<f64>() / n),
                    Some(defined.iter().map(|s| s.1).sum::<f64>() / n),
                )
            }
        }
    }
}

/// Scores every patch, then each city, each continent, and the whole set.
/// Rows are ordered patch, city, continent, world; ids sort within each
/// scope. Every patch must appear in the group table.
pub fn aggregate(
    confusions: &[(String, Confusion)],
    groups: &GroupTable,
    mode: Aggregation,
) -> Result<Vec<ScoreRow>> {
    if confusions.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let mut by_city: BTreeMap<&str, Vec<&Confusion>> = BTreeMap::new();
    let mut by_continent: BTreeMap<&str, Vec<&Confusion>> = BTreeMap::new();
    let mut world: Vec<&Confusion> = Vec::new();
    let mut rows = Vec::new();

    let mut sorted: Vec<&(String, Confusion)> = confusions.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    for (patch_id, c) in sorted {
        let (city, continent) = groups
            .rows
            .get(patch_id)
            .ok_or_else(|| Error::Csv(format!("patch {patch_id:?} missing from groups table")))?;
        let (f1, iou) = score_group(&[c], mode);
        rows.push(ScoreRow {
            scope: "patch".into(),
            scope_id: patch_id.clone(),
            n_patches: 1,
            f1,
            iou,
        });
        by_city.entry(city).or_default().push(c);
        by_continent.entry(continent).or_default().push(c);
        world.push(c);
    }
    for (scope, table) in [("city", by_city), ("continent", by_continent)] {
        for (id, members) in table {
            let (f1, iou) = score_group(&members, mode);
            rows.push(ScoreRow {
                scope: scope.into(),
                scope_id: id.into(),
                n_patches: members.len(),
                f1,
                iou,
            });
        }
    }
    let (f1, iou) = score_group(&world, mode);
    rows.push(ScoreRow { scope: "world".into(), scope_id: "all".into(), n_patches: world.len(), f1, iou });
    Ok(rows)
}

pub fn write_scores_csv(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Csv(e.to_string()))?;
    writer
        .write_record(["scope", "scope_id", "n_patches", "f1", "iou"])
        .map_err(|e| Error::Csv(e.to_string()))?;
    let fmt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
    for row in rows {
        writer
            .write_record([
                row.scope.as_str(),
                row.scope_id.as_str(),
                &row.n_patches.to_string(),
                &fmt(row.f1),
                &fmt(row.iou),
            ])
            .map_err(|e| Error::Csv(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{GeoTransform, Samples};

    fn mask(values: &[u8], w: usize, h: usize) -> RasterGrid {
        let t = GeoTransform::new(0.0, 1.0, 0.01, 0.01).unwrap();
        RasterGrid::single_band(w, h, Samples::U8(values.to_vec()), Some(255.0), t).unwrap()
    }

    #[test]
    fn identical_masks_have_no_errors() {
        let m = mask(&[1, 0, 1, 0], 2, 2);
        let c = confusion(&m, &m).unwrap();
        assert_eq!(c, Confusion { tp: 2, fp: 0, fn_: 0, tn: 2 });
        assert_eq!(f1_iou(&c), Some((1.0, 1.0)));
    }

    #[test]
    fn complement_has_no_agreement() {
        let a = mask(&[1, 0, 1, 0], 2, 2);
        let b = mask(&[0, 1, 0, 1], 2, 2);
        let c = confusion(&a, &b).unwrap();
        assert_eq!(c.tp, 0);
        assert_eq!(c.tn, 0);
        assert_eq!(c.total(), 4);
    }

    #[test]
    fn hand_built_two_by_two_fixture() {
        let pred = mask(&[1, 1, 1, 0], 2, 2);
        let reference = mask(&[1, 1, 0, 1], 2, 2);
        let c = confusion(&pred, &reference).unwrap();
        assert_eq!(c, Confusion { tp: 2, fp: 1, fn_: 1, tn: 0 });
        let (f1, iou) = f1_iou(&c).unwrap();
        assert!((f1 - 0.6667).abs() < 1e-4);
        assert_eq!(iou, 0.5);
    }

    #[test]
    fn nodata_pixels_are_excluded() {
        let pred = mask(&[1, 255, 0, 1], 2, 2);
        let reference = mask(&[1, 1, 255, 0], 2, 2);
        let c = confusion(&pred, &reference).unwrap();
        assert_eq!(c.total(), 2);
        assert_eq!(c, Confusion { tp: 1, fp: 1, fn_: 0, tn: 0 });
    }

    #[test]
    fn dims_mismatch_is_an_error() {
        let a = mask(&[1, 0], 2, 1);
        let b = mask(&[1, 0, 1, 0], 2, 2);
        assert!(matches!(confusion(&a, &b), Err(Error::DimsMismatch(..))));
    }

    #[test]
    fn all_negative_scope_is_undefined() {
        assert_eq!(f1_iou(&Confusion { tp: 0, fp: 0, fn_: 0, tn: 9 }), None);
    }

    #[test]
    fn f1_is_two_iou_over_one_plus_iou() {
        let cases = [(2, 1, 1, 0), (5, 2, 3, 7), (1, 0, 0, 0), (3, 9, 1, 2), (0, 4, 2, 1)];
        for (tp, fp, fn_, tn) in cases {
            let c = Confusion { tp, fp, fn_, tn };
            let (f1, iou) = f1_iou(&c).unwrap();
            assert!((f1 - 2.0 * iou / (1.0 + iou)).abs() < 1e-12);
            assert!(f1 >= iou);
        }
    }

    #[test]
    fn scores_survive_pixel_permutation() {
        let a = mask(&[1, 1, 0, 0, 1, 0], 3, 2);
        let b = mask(&[1, 0, 0, 1, 1, 0], 3, 2);
        let base = confusion(&a, &b).unwrap();
        // same pixels, shuffled identically on both sides
        let a2 = mask(&[0, 1, 1, 0, 0, 1], 3, 2);
        let b2 = mask(&[1, 1, 0, 0, 0, 1], 3, 2);
        let permuted = confusion(&a2, &b2).unwrap();
        assert_eq!(f1_iou(&base), f1_iou(&permuted));
    }

    fn groups(pairs: &[(&str, &str, &str)]) -> GroupTable {
        let rows = pairs
            .iter()
            .map(|(p, c, k)| (p.to_string(), (c.to_string(), k.to_string())))
            .collect();
        GroupTable { rows }
    }

    #[test]
    fn micro_sum_is_homogeneous() {
        let c = Confusion { tp: 2, fp: 1, fn_: 1, tn: 0 };
        let table = groups(&[("a", "x", "e"), ("b", "x", "e"), ("c", "x", "e")]);
        let one = aggregate(&[("a".into(), c)], &table, Aggregation::Micro).unwrap();
        let three = aggregate(
            &[("a".into(), c), ("b".into(), c), ("c".into(), c)],
            &table,
            Aggregation::Micro,
        )
        .unwrap();
        let world = |rows: &[ScoreRow]| rows.iter().find(|r| r.scope == "world").unwrap().clone();
        assert_eq!(world(&one).f1, world(&three).f1);
        assert_eq!(world(&three).n_patches, 3);
    }

    #[test]
    fn true_negative_patches_add_nothing_under_micro() {
        let table = groups(&[("a", "x", "e"), ("b", "x", "e")]);
        let rows = aggregate(
            &[
                ("a".into(), Confusion { tp: 2, fp: 1, fn_: 1, tn: 0 }),
                ("b".into(), Confusion { tp: 0, fp: 0, fn_: 0, tn: 4 }),
            ],
            &table,
            Aggregation::Micro,
        )
        .unwrap();
        let city = rows.iter().find(|r| r.scope == "city").unwrap();
        assert!((city.f1.unwrap() - 0.6667).abs() < 1e-4);
        // the all-negative patch itself is undefined
        let b = rows.iter().find(|r| r.scope == "patch" && r.scope_id == "b").unwrap();
        assert_eq!(b.f1, None);
    }

    #[test]
    fn macro_mode_averages_defined_patches() {
        let table = groups(&[("a", "x", "e"), ("b", "x", "e"), ("c", "x", "e")]);
        let rows = aggregate(
            &[
                ("a".into(), Confusion { tp: 1, fp: 0, fn_: 0, tn: 0 }), // f1 = 1
                ("b".into(), Confusion { tp: 1, fp: 1, fn_: 1, tn: 0 }), // f1 = 0.5
                ("c".into(), Confusion { tp: 0, fp: 0, fn_: 0, tn: 4 }), // undefined
            ],
            &table,
            Aggregation::Macro,
        )
        .unwrap();
        let city = rows.iter().find(|r| r.scope == "city").unwrap();
        assert_eq!(city.f1, Some(0.75));
        assert_eq!(city.n_patches, 3);
    }

    #[test]
    fn grouping_splits_cities_and_continents() {
        let table = groups(&[("a", "x", "eu"), ("b", "y", "eu"), ("c", "z", "af")]);
        let c = Confusion { tp: 1, fp: 1, fn_: 0, tn: 0 };
        let rows = aggregate(
            &[("a".into(), c), ("b".into(), c), ("c".into(), c)],
            &table,
            Aggregation::Micro,
        )
        .unwrap();
        assert_eq!(rows.iter().filter(|r| r.scope == "city").count(), 3);
        let eu = rows.iter().find(|r| r.scope == "continent" && r.scope_id == "eu").unwrap();
        assert_eq!(eu.n_patches, 2);
        assert_eq!(rows.iter().filter(|r| r.scope == "world").count(), 1);
    }

    #[test]
    fn unknown_patch_is_an_error_and_empty_input_too() {
        let table = groups(&[("a", "x", "e")]);
        let c = Confusion { tp: 1, fp: 0, fn_: 0, tn: 0 };
        assert!(matches!(
            aggregate(&[("zz".into(), c)], &table, Aggregation::Micro),
            Err(Error::Csv(_))
        ));
        assert!(matches!(aggregate(&[], &table, Aggregation::Micro), Err(Error::EmptyGroup)));
    }

    #[test]
    fn groups_csv_and_scores_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let gpath = dir.path().join("groups.csv");
        std::fs::write(&gpath, "patch_id,city,continent\np0_0,atlantis,oceania\n").unwrap();
        let table = read_groups_csv(&gpath).unwrap();
        assert_eq!(table.rows["p0_0"], ("atlantis".to_string(), "oceania".to_string()));

        let rows = vec![ScoreRow {
            scope: "patch".into(),
            scope_id: "p0_0".into(),
            n_patches: 1,
            f1: Some(0.5),
            iou: None,
        }];
        let spath = dir.path().join("scores.csv");
        write_scores_csv(&spath, &rows).unwrap();
        let text = std::fs::read_to_string(&spath).unwrap();
        assert_eq!(text, "scope,scope_id,n_patches,f1,iou\npatch,p0_0,1,0.500000,\n");

        std::fs::write(&gpath, "patch,city\nx,y\n").unwrap();
        assert!(matches!(read_groups_csv(&gpath), Err(Error::Csv(_))));
    }
}
