//! End-to-end orchestration: settlement-guided cell selection, per-cell
//! scene prep (crop → calibrate → mosaic), a fixed worker pool running
//! (segmenter × cell) items round-robin, vote/filter reduction, 5°
//! tiling, and analytics. Every stage output lands on a deterministic
//! path; artifact bytes are independent of the worker count.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analytics::{
    self, building_area, density_map, regress_socio, solar_potential_map, zonal_building_area,
    RegionStats, SolarParams,
};
use crate::calibrate::{calibrate, CalibrationMode};
use crate::ensemble::{binarize, majority_vote, run_segmenters, Segmenter};
use crate::error::{Error, Result};
use crate::io::{read_raster, write_raster_deflate};
use crate::polygons::PolygonSet;
use crate::postprocess::{align_to, area_aware_filter, FilterRules};
use crate::raster::{crop_window, mosaic, GridCell, RasterGrid, TileSpec, GRID_DEG, TILE_DEG};
use crate::scenes::{read_scene_manifest, select_cells, select_scenes, QualityRule, SceneRecord};

// ── configuration ───────────────────────────────────────────────────────

fn default_grid() -> f64 {
    GRID_DEG
}
fn default_tile() -> f64 {
    TILE_DEG
}
fn default_vote() -> usize {
    2
}
fn default_workers() -> usize {
    1
}
fn default_segmenters() -> Vec<String> {
    vec!["baseline".to_string(); 4]
}
fn default_calibration() -> String {
    "per-scope".to_string()
}
fn default_quality() -> String {
    "independent".to_string()
}
fn default_coverage() -> f64 {
    crate::scenes::DEFAULT_COVERAGE_TARGET
}
fn default_cell_size() -> f64 {
    analytics::DEFAULT_CELL_SIZE_M
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub scene_manifest: PathBuf,
    pub settlement: PathBuf,
    pub landcover: PathBuf,
    pub urban: PathBuf,
    #[serde(default)]
    pub atlas: Option<PathBuf>,
    #[serde(default)]
    pub regions: Option<PathBuf>,
    #[serde(default)]
    pub socio: Option<PathBuf>,
    pub out_dir: PathBuf,
    #[serde(default = "default_grid")]
    pub grid_size_deg: f64,
    #[serde(default = "default_tile")]
    pub tile_size_deg: f64,
    #[serde(default = "default_vote")]
    pub vote_threshold: usize,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_segmenters")]
    pub segmenters: Vec<String>,
    #[serde(default = "default_calibration")]
    pub calibration: String,
    #[serde(default = "default_quality")]
    pub quality_rule: String,
    #[serde(default = "default_coverage")]
    pub coverage_target: f64,
    #[serde(default)]
    pub filter_rules: FilterRules,
    #[serde(default)]
    pub solar: SolarParams,
    #[serde(default = "default_cell_size")]
    pub cell_size_m: f64,
    #[serde(default)]
    pub seed: u64,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<PipelineConfig> {
        let config: PipelineConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_size_deg != GRID_DEG {
            return Err(Error::Config(format!(
                "grid_size_deg is fixed at {GRID_DEG}, got {}",
                self.grid_size_deg
            )));
        }
        if self.tile_size_deg != TILE_DEG {
            return Err(Error::Config(format!(
                "tile_size_deg is fixed at {TILE_DEG}, got {}",
                self.tile_size_deg
            )));
        }
        if self.workers < 1 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.segmenters.is_empty() {
            return Err(Error::NoSegmenters);
        }
        for spec in &self.segmenters {
            Segmenter::parse(spec)?;
        }
        if self.vote_threshold < 1 || self.vote_threshold > self.segmenters.len() {
            return Err(Error::InvalidVoteThreshold {
                threshold: self.vote_threshold,
                count: self.segmenters.len(),
            });
        }
        CalibrationMode::parse(&self.calibration)?;
        QualityRule::parse(&self.quality_rule)
            .ok_or_else(|| Error::Config(format!("unknown quality_rule {:?}", self.quality_rule)))?;
        if !(0.0..=1.0).contains(&self.coverage_target) || self.coverage_target == 0.0 {
            return Err(Error::Config(format!(
                "coverage_target {} outside (0,1]",
                self.coverage_target
            )));
        }
        self.solar.validate()?;
        if self.cell_size_m <= 0.0 {
            return Err(Error::Config(format!("cell_size_m {} must be positive", self.cell_size_m)));
        }
        Ok(())
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(0xcbf29ce484222325u64, |h, b| (h ^ u64::from(*b)).wrapping_mul(0x100000001b3))
}

/// Hash of everything that affects artifact content. Worker count and
/// output location are excluded: runs differing only in those must
/// produce identical artifacts, manifest included.
pub fn config_hash(config: &PipelineConfig) -> String {
    let mut value = serde_json::to_value(config).expect("config serializes");
    let map = value.as_object_mut().expect("config is an object");
    map.remove("workers");
    map.remove("out_dir");
    format!("{:016x}", fnv1a64(value.to_string().as_bytes()))
}

// ── run manifest ────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub cell: String,
    pub status: String,
    pub scenes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub cells: Vec<CellReport>,
    pub tiles: Vec<String>,
    pub building_area_m2: Option<f64>,
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn any_cell_ok(&self) -> bool {
        self.cells.iter().any(|c| c.status == "ok")
    }
}

// ── pipeline ────────────────────────────────────────────────────────────

struct CellWork {
    cell: GridCell,
    name: String,
    scenes: Vec<SceneRecord>,
}

fn cell_name(cell: GridCell) -> String {
    format!("{}_{}", cell.j, cell.i)
}

fn stage_path(out: &Path, stage: &str, name: &str) -> PathBuf {
    out.join(stage).join(format!("{name}.tif"))
}

/// Crop every selected scene to the cell, calibrate each, and mosaic
/// them newest-first onto the cell grid at the finest input resolution.
fn prepare_cell(out: &Path, work: &CellWork, mode: CalibrationMode) -> Result<()> {
    let mut calibrated: Vec<RasterGrid> = Vec::with_capacity(work.scenes.len());
    for record in &work.scenes {
        let scene = read_raster(&record.path)?;
        let cropped = crop_window(&scene, &work.cell.bbox())?;
        calibrated.push(calibrate(&cropped, mode)?);
    }
    let resolution = calibrated
        .iter()
        .map(|r| r.transform().pixel_width)
        .fold(f64::INFINITY, f64::min);
    let refs: Vec<&RasterGrid> = calibrated.iter().collect();
    let merged = mosaic(&refs, &work.cell.bbox(), resolution)?;
    write_raster_deflate(&stage_path(out, "calibrated", &work.name), &merged)
}

/// One (segmenter × cell) work item: label the calibrated mosaic and
/// persist both the raw classes and the binarized mask.
fn run_seg_item(out: &Path, name: &str, seg_idx: usize, seg: &Segmenter) -> Result<()> {
    let img = read_raster(&stage_path(out, "calibrated", name))?;
    let labels = run_segmenters(&img, std::slice::from_ref(seg))?.pop().expect("one mask");
    write_raster_deflate(&stage_path(out, &format!("segmented/s{seg_idx}"), name), &labels)?;
    let mask = binarize(&labels)?;
    write_raster_deflate(&stage_path(out, &format!("binary/s{seg_idx}"), name), &mask)
}

/// Vote across the per-segmenter masks, then land-cover filter.
fn reduce_cell(
    out: &Path,
    name: &str,
    n_segmenters: usize,
    threshold: usize,
    urban: &RasterGrid,
    landcover: &RasterGrid,
    rules: &FilterRules,
) -> Result<RasterGrid> {
    let masks: Vec<RasterGrid> = (0..n_segmenters)
        .map(|k| read_raster(&stage_path(out, &format!("binary/s{k}"), name)))
        .collect::<Result<_>>()?;
    let refs: Vec<&RasterGrid> = masks.iter().collect();
    let voted = majority_vote(&refs, threshold)?;
    write_raster_deflate(&stage_path(out, "voted", name), &voted)?;
    let urban_aligned = align_to(urban, &voted)?;
    let lc_aligned = align_to(landcover, &voted)?;
    let filtered = area_aware_filter(&voted, &urban_aligned, &lc_aligned, rules)?;
    write_raster_deflate(&stage_path(out, "filtered", name), &filtered)?;
    Ok(filtered)
}

fn list_artifacts(out: &Path) -> Result<Vec<String>> {
    let mut files = Vec::new();
    let mut stack = vec![out.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != "run_manifest.json") {
                files.push(
                    path.strip_prefix(out)
                        .expect("artifact under out dir")
                        .display()
                        .to_string(),
                );
            }
        }
    }
    files.sort();
    Ok(files)
}

pub fn run_pipeline(config: &PipelineConfig) -> Result<RunManifest> {
    config.validate()?;
    let out = config.out_dir.as_path();
    std::fs::create_dir_all(out)?;

    let mode = CalibrationMode::parse(&config.calibration)?;
    let quality = QualityRule::parse(&config.quality_rule).expect("validated");
    let segmenters: Vec<Segmenter> =
        config.segmenters.iter().map(|s| Segmenter::parse(s)).collect::<Result<_>>()?;

    let settlement = read_raster(&config.settlement)?;
    let urban = read_raster(&config.urban)?;
    let landcover = read_raster(&config.landcover)?;
    let manifest = read_scene_manifest(&config.scene_manifest)?;

    let cells = select_cells(&settlement);
    let mut reports: Vec<CellReport> = Vec::with_capacity(cells.len());
    let mut work: Vec<CellWork> = Vec::new();
    for &cell in &cells {
        let name = cell_name(cell);
        match select_scenes(&manifest, cell, quality, config.coverage_target) {
            Some(scenes) => {
                let ids = scenes.iter().map(|s| s.scene_id.clone()).collect();
                reports.push(CellReport { cell: name.clone(), status: "ok".into(), scenes: ids });
                work.push(CellWork { cell, name, scenes });
            }
            None => reports.push(CellReport {
                cell: name,
                status: "skipped: no usable scenes".into(),
                scenes: Vec::new(),
            }),
        }
    }

    let fail = |reports: &mut [CellReport], name: &str, err: &Error| {
        let report = reports.iter_mut().find(|r| r.cell == name).expect("cell reported");
        if report.status == "ok" {
            report.status = format!("failed: {err}");
        }
    };

    // stage dirs exist before workers race to write into them
    for stage in ["calibrated", "voted", "filtered", "tiles", "density", "analytics"] {
        std::fs::create_dir_all(out.join(stage))?;
    }
    for k in 0..segmenters.len() {
        std::fs::create_dir_all(out.join(format!("segmented/s{k}")))?;
        std::fs::create_dir_all(out.join(format!("binary/s{k}")))?;
    }
    if config.atlas.is_some() {
        std::fs::create_dir_all(out.join("solar"))?;
    }

    // phase 1: sequential per-cell scene prep
    let mut prepared: Vec<&CellWork> = Vec::new();
    for w in &work {
        match prepare_cell(out, w, mode) {
            Ok(()) => prepared.push(w),
            Err(e) => fail(&mut reports, &w.name, &e),
        }
    }

    // phase 2: (segmenter × cell) items, fixed pool, item i -> worker i % n
    let items: Vec<(usize, &CellWork)> = prepared
        .iter()
        .flat_map(|w| (0..segmenters.len()).map(move |k| (k, *w)))
        .collect();
    let n_workers = config.workers;
    let item_errors: Vec<(String, Error)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..n_workers)
            .map(|worker| {
                let items = &items;
                let segmenters = &segmenters;
                scope.spawn(move || {
                    let mut errors = Vec::new();
                    for idx in (worker..items.len()).step_by(n_workers) {
                        let (seg_idx, w) = &items[idx];
                        if let Err(e) = run_seg_item(out, &w.name, *seg_idx, &segmenters[*seg_idx])
                        {
                            errors.push((w.name.clone(), e));
                        }
                    }
                    errors
                })
            })
            .collect();
        let mut all: Vec<(String, Error)> = handles
            .into_iter()
            .flat_map(|h| h.join().expect("segmentation worker panicked"))
            .collect();
        all.sort_by(|a, b| a.0.cmp(&b.0));
        all
    });
    for (name, e) in &item_errors {
        fail(&mut reports, name, e);
    }

    // phase 3: sequential vote + filter per surviving cell
    let mut filtered: BTreeMap<(i64, i64), RasterGrid> = BTreeMap::new();
    for w in &prepared {
        if reports.iter().any(|r| r.cell == w.name && r.status != "ok") {
            continue;
        }
        match reduce_cell(
            out,
            &w.name,
            segmenters.len(),
            config.vote_threshold,
            &urban,
            &landcover,
            &config.filter_rules,
        ) {
            Ok(grid) => {
                filtered.insert((w.cell.j, w.cell.i), grid);
            }
            Err(e) => fail(&mut reports, &w.name, &e),
        }
    }

    // phase 4: 5° tiles and analytics, single-threaded
    let mut tile_groups: BTreeMap<(i64, i64), Vec<&RasterGrid>> = BTreeMap::new();
    for ((j, i), grid) in &filtered {
        let cell = GridCell { i: *i, j: *j };
        let b = cell.bbox();
        let tile = TileSpec::containing(
            (b.min_lon + b.max_lon) / 2.0,
            (b.min_lat + b.max_lat) / 2.0,
        );
        tile_groups.entry((tile.lat0 / 5, tile.lon0 / 5)).or_default().push(grid);
    }

    let atlas = config.atlas.as_deref().map(read_raster).transpose()?;
    let regions = config
        .regions
        .as_deref()
        .map(|p| -> Result<PolygonSet> {
            PolygonSet::from_geojson(&std::fs::read_to_string(p)?)
        })
        .transpose()?;

    let mut tiles = Vec::new();
    let mut total_area: Option<f64> = None;
    let mut zonal: BTreeMap<String, f64> = BTreeMap::new();
    for ((tj, ti), members) in &tile_groups {
        let tile = TileSpec { lon0: ti * 5, lat0: tj * 5 };
        let tname = format!("{tj}_{ti}");
        let resolution = members
            .iter()
            .map(|r| r.transform().pixel_width)
            .fold(f64::INFINITY, f64::min);
        let merged = mosaic(members, &tile.bbox(), resolution)?;
        write_raster_deflate(&stage_path(out, "tiles", &tname), &merged)?;

        let density = density_map(&merged, config.cell_size_m)?;
        write_raster_deflate(&stage_path(out, "density", &tname), &density)?;
        if let Some(atlas) = &atlas {
            let solar = solar_potential_map(&merged, atlas, &config.solar, config.cell_size_m)?;
            write_raster_deflate(&stage_path(out, "solar", &tname), &solar)?;
        }
        let area = building_area(&merged)?;
        *total_area.get_or_insert(0.0) += area;
        if let Some(regions) = &regions {
            for row in zonal_building_area(&merged, regions)? {
                *zonal.entry(row.region_id).or_insert(0.0) += row.building_area_m2;
            }
        }
        tiles.push(tname);
    }

    if regions.is_some() {
        let mut writer = csv::Writer::from_path(out.join("analytics/zonal.csv"))
            .map_err(|e| Error::Csv(e.to_string()))?;
        writer
            .write_record(["region_id", "building_area_m2"])
            .map_err(|e| Error::Csv(e.to_string()))?;
        let unassigned = zonal.remove(analytics::UNASSIGNED_REGION);
        for (region, area) in &zonal {
            writer
                .write_record([region.as_str(), &format!("{area}")])
                .map_err(|e| Error::Csv(e.to_string()))?;
        }
        if let Some(area) = unassigned {
            writer
                .write_record([analytics::UNASSIGNED_REGION, &format!("{area}")])
                .map_err(|e| Error::Csv(e.to_string()))?;
        }
        writer.flush()?;

        if let Some(socio_path) = &config.socio {
            let table = analytics::read_socio_csv(socio_path)?;
            let areas: Vec<RegionStats> = zonal
                .iter()
                .map(|(region_id, &building_area_m2)| RegionStats {
                    region_id: region_id.clone(),
                    building_area_m2,
                })
                .collect();
            let mut text = String::from("variable,slope,intercept,rho,n\n");
            for (variable, result) in regress_socio(&areas, &table) {
                match result {
                    Ok(r) => text.push_str(&format!(
                        "{variable},{},{},{},{}\n",
                        r.slope, r.intercept, r.rho, r.n
                    )),
                    Err(_) => text.push_str(&format!("{variable},,,,0\n")),
                }
            }
            std::fs::write(out.join("analytics/regression.csv"), text)?;
        }
    }

    let run = RunManifest {
        config_hash: config_hash(config),
        cells: reports,
        tiles,
        building_area_m2: total_area,
        artifacts: list_artifacts(out)?,
    };
    let mut text = serde_json::to_string_pretty(&run)?;
    text.push('\n');
    std::fs::write(out.join("run_manifest.json"), text)?;
    Ok(run)
}
