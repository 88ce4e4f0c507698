//! Settlement-guided grid-cell selection and scene-manifest filtering
//! with the 2019 → 2018 → basemap fallback cascade.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::raster::{GeoBox, GridCell, RasterGrid};

/// Per-metric ceiling for usable imagery, percent.
pub const CLOUD_HAZE_MAX: f64 = 10.0;

/// Fraction of a cell that selected scenes must cover before the
/// fallback cascade stops adding older or coarser sources.
pub const DEFAULT_COVERAGE_TARGET: f64 = 0.99;

pub const PRIMARY_YEAR: i32 = 2019;
pub const FALLBACK_YEAR: i32 = 2018;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    SurfaceReflectance,
    Basemap,
}

impl SceneKind {
    pub fn parse(s: &str) -> Option<SceneKind> {
        match s {
            "surface-reflectance" => Some(SceneKind::SurfaceReflectance),
            "basemap" => Some(SceneKind::Basemap),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SceneKind::SurfaceReflectance => "surface-reflectance",
            SceneKind::Basemap => "basemap",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecord {
    pub scene_id: String,
    pub footprint: GeoBox,
    pub cloud_pct: f64,
    pub haze_pct: f64,
    pub year: i32,
    pub kind: SceneKind,
    pub path: PathBuf,
}

/// How the cloud/haze ceilings combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QualityRule {
    /// Each metric independently below the ceiling. The default.
    Independent,
    /// Their sum below the ceiling.
    CombinedSum,
}

impl QualityRule {
    pub fn parse(s: &str) -> Option<QualityRule> {
        match s {
            "independent" => Some(QualityRule::Independent),
            "combined-sum" => Some(QualityRule::CombinedSum),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            QualityRule::Independent => "independent",
            QualityRule::CombinedSum => "combined-sum",
        }
    }

    pub fn admits(&self, r: &SceneRecord) -> bool {
        match self {
            QualityRule::Independent => r.cloud_pct < CLOUD_HAZE_MAX && r.haze_pct < CLOUD_HAZE_MAX,
            QualityRule::CombinedSum => r.cloud_pct + r.haze_pct < CLOUD_HAZE_MAX,
        }
    }
}

// ── manifest CSV ────────────────────────────────────────────────────────

const MANIFEST_HEADER: [&str; 10] = [
    "scene_id", "min_lon", "min_lat", "max_lon", "max_lat", "cloud_pct", "haze_pct", "year",
    "kind", "path",
];

/// Reads a scene manifest. Relative raster paths are resolved against
/// the manifest's own directory.
pub fn read_scene_manifest(path: &Path) -> Result<Vec<SceneRecord>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Csv(e.to_string()))?;
    let headers: Vec<&str> =
        reader.headers().map_err(|e| Error::Csv(e.to_string()))?.iter().collect();
    if headers != MANIFEST_HEADER {
        return Err(Error::Csv(format!("unexpected manifest header {headers:?}")));
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Csv(e.to_string()))?;
        let id = record.get(0).unwrap_or("").to_string();
        let bad = |reason: String| Error::BadSceneRecord { id: id.clone(), reason };
        let num = |idx: usize, name: &str| -> Result<f64> {
            record
                .get(idx)
                .unwrap_or("")
                .trim()
                .parse::<f64>()
                .map_err(|e| bad(format!("{name}: {e}")))
        };
        let footprint = GeoBox {
            min_lon: num(1, "min_lon")?,
            min_lat: num(2, "min_lat")?,
            max_lon: num(3, "max_lon")?,
            max_lat: num(4, "max_lat")?,
        };
        if footprint.min_lon >= footprint.max_lon || footprint.min_lat >= footprint.max_lat {
            return Err(bad("degenerate footprint".to_string()));
        }
        let cloud_pct = num(5, "cloud_pct")?;
        let haze_pct = num(6, "haze_pct")?;
        for (name, v) in [("cloud_pct", cloud_pct), ("haze_pct", haze_pct)] {
            if !(0.0..=100.0).contains(&v) {
                return Err(bad(format!("{name} {v} outside [0,100]")));
            }
        }
        let year = record
            .get(7)
            .unwrap_or("")
            .trim()
            .parse::<i32>()
            .map_err(|e| bad(format!("year: {e}")))?;
        let kind_text = record.get(8).unwrap_or("");
        let kind =
            SceneKind::parse(kind_text).ok_or_else(|| bad(format!("unknown kind {kind_text:?}")))?;
        let raw = PathBuf::from(record.get(9).unwrap_or(""));
        let path = if raw.is_absolute() { raw } else { base.join(raw) };
        out.push(SceneRecord { scene_id: id, footprint, cloud_pct, haze_pct, year, kind, path });
    }
    Ok(out)
}

pub fn write_scene_manifest(path: &Path, records: &[SceneRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Csv(e.to_string()))?;
    writer.write_record(MANIFEST_HEADER).map_err(|e| Error::Csv(e.to_string()))?;
    for r in records {
        writer
            .write_record([
                r.scene_id.as_str(),
                &format!("{}", r.footprint.min_lon),
                &format!("{}", r.footprint.min_lat),
                &format!("{}", r.footprint.max_lon),
                &format!("{}", r.footprint.max_lat),
                &format!("{}", r.cloud_pct),
                &format!("{}", r.haze_pct),
                &format!("{}", r.year),
                r.kind.name(),
                &r.path.display().to_string(),
            ])
            .map_err(|e| Error::Csv(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

// ── cell selection ──────────────────────────────────────────────────────

/// Every 0.2° grid cell holding at least one built pixel center, sorted
/// by (j, i).
pub fn select_cells(settlement: &RasterGrid) -> Vec<GridCell> {
    let mut cells: BTreeSet<(i64, i64)> = BTreeSet::new();
    for row in 0..settlement.height() {
        for col in 0..settlement.width() {
            if matches!(settlement.value(0, row, col), Some(v) if v != 0.0) {
                let (lon, lat) = settlement.transform().pixel_center(row, col);
                let c = GridCell::containing(lon, lat);
                cells.insert((c.j, c.i));
            }
        }
    }
    cells.into_iter().map(|(j, i)| GridCell { i, j }).collect()
}

// ── scene selection ─────────────────────────────────────────────────────

/// Fraction of `target` covered by the union of `boxes`, by coordinate
/// compression over the clipped rectangles. Exact up to float rounding.
pub fn coverage_fraction(target: &GeoBox, boxes: &[GeoBox]) -> f64 {
    let clipped: Vec<GeoBox> = boxes.iter().filter_map(|b| target.intersection(b)).collect();
    if clipped.is_empty() {
        return 0.0;
    }
    let mut lons: Vec<f64> = clipped.iter().flat_map(|b| [b.min_lon, b.max_lon]).collect();
    let mut lats: Vec<f64> = clipped.iter().flat_map(|b| [b.min_lat, b.max_lat]).collect();
    lons.sort_by(f64::total_cmp);
    lons.dedup();
    lats.sort_by(f64::total_cmp);
    lats.dedup();
    let mut covered = 0.0;
    for li in 0..lons.len() - 1 {
        for la in 0..lats.len() - 1 {
            let (clon, clat) = ((lons[li] + lons[li + 1]) / 2.0, (lats[la] + lats[la + 1]) / 2.0);
            if clipped.iter().any(|b| {
                clon > b.min_lon && clon < b.max_lon && clat > b.min_lat && clat < b.max_lat
            }) {
                covered += (lons[li + 1] - lons[li]) * (lats[la + 1] - lats[la]);
            }
        }
    }
    covered / ((target.max_lon - target.min_lon) * (target.max_lat - target.min_lat))
}

/// Scene choice for one cell: clean 2019 imagery, widened to 2018 when
/// coverage falls short of the target, then to basemap records (which
/// are exempt from the cloud/haze gate). `None` signals the cell has no
/// usable source and should be skipped. The result is ordered for
/// first-valid-wins mosaicking: newest year first, imagery before
/// basemap, then scene id.
pub fn select_scenes(
    manifest: &[SceneRecord],
    cell: GridCell,
    rule: QualityRule,
    coverage_target: f64,
) -> Option<Vec<SceneRecord>> {
    let cell_box = cell.bbox();
    let intersecting: Vec<&SceneRecord> =
        manifest.iter().filter(|r| r.footprint.intersects(&cell_box)).collect();
    let qualifying = |year: i32| -> Vec<&SceneRecord> {
        intersecting
            .iter()
            .copied()
            .filter(|r| r.kind == SceneKind::SurfaceReflectance && r.year == year && rule.admits(r))
            .collect()
    };

    let mut chosen = qualifying(PRIMARY_YEAR);
    let coverage = |set: &[&SceneRecord]| {
        coverage_fraction(&cell_box, &set.iter().map(|r| r.footprint).collect::<Vec<_>>())
    };
    if coverage(&chosen) < coverage_target {
        chosen.extend(qualifying(FALLBACK_YEAR));
    }
    if coverage(&chosen) < coverage_target {
        chosen.extend(intersecting.iter().copied().filter(|r| r.kind == SceneKind::Basemap));
    }
    if chosen.is_empty() {
        return None;
    }
    chosen.sort_by(|a, b| {
        b.year
            .cmp(&a.year)
            .then_with(|| (a.kind == SceneKind::Basemap).cmp(&(b.kind == SceneKind::Basemap)))
            .then_with(|| a.scene_id.cmp(&b.scene_id))
    });
    Some(chosen.into_iter().cloned().collect())
}
