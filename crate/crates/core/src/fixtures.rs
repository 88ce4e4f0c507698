//! Deterministic synthetic world generator: per-cell 4-band imagery with
//! planted building rectangles, matching GeoJSON and reference masks,
//! settlement/urban/land-cover rasters, a PV atlas, a scene manifest with
//! cloudy decoys, and a socioeconomic table tied to building area by a
//! known linear law.
//!
//! Radiometry is tuned so the spectral-rule segmenter is a near-oracle
//! after calibration: buildings and bright-grass decoys are low-NDVI and
//! bright (both get predicted), and the land-cover filter then removes
//! exactly the decoys. Background vegetation is high-NDVI.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analytics::building_area;
use crate::error::{Error, Result};
use crate::io::write_raster_deflate;
use crate::postprocess::landcover;
use crate::raster::{GeoBox, GeoTransform, GridCell, RasterGrid, Samples};
use crate::scenes::{write_scene_manifest, SceneKind, SceneRecord};

/// Pixels per cell edge for the synthetic imagery (0.2° cell).
pub const CELL_PIXELS: usize = 256;

/// Pixel size of the settlement raster, degrees (20 px per cell edge).
pub const SETTLEMENT_PIXEL_DEG: f64 = 0.01;

/// Pixel size of the PV atlas, degrees (~1 km).
pub const ATLAS_PIXEL_DEG: f64 = 0.009;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorldSpec {
    pub seed: u64,
    pub n_cells: usize,
    /// Mean building count; actual counts fan out ±40% across cells so
    /// region areas vary enough for a meaningful regression.
    pub buildings_per_cell: usize,
    /// Rectangle edge range in pixels, inclusive.
    pub building_size_range: (usize, usize),
    /// Fraction of background pixels that are vegetation; the rest are
    /// bright-grass decoys.
    pub vegetation_fraction: f64,
    /// Controls how many cloudy decoy scenes accompany the two clean
    /// scenes of each cell.
    pub cloud_scene_fraction: f64,
}

impl Default for SyntheticWorldSpec {
    fn default() -> Self {
        SyntheticWorldSpec {
            seed: 7,
            n_cells: 4,
            buildings_per_cell: 24,
            building_size_range: (6, 20),
            vegetation_fraction: 0.7,
            cloud_scene_fraction: 0.25,
        }
    }
}

impl SyntheticWorldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_cells < 1 {
            return Err(Error::Config("n_cells must be at least 1".into()));
        }
        let (lo, hi) = self.building_size_range;
        if lo < 1 || lo > hi || hi > CELL_PIXELS / 4 {
            return Err(Error::Config(format!(
                "building_size_range ({lo},{hi}) outside [1,{}]",
                CELL_PIXELS / 4
            )));
        }
        for (name, v) in [
            ("vegetation_fraction", self.vegetation_fraction),
            ("cloud_scene_fraction", self.cloud_scene_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} {v} outside [0,1]")));
            }
        }
        if self.cloud_scene_fraction >= 1.0 && self.n_cells > 0 {
            // n_decoys = 2f/(1-f) diverges at 1
            return Err(Error::Config("cloud_scene_fraction must be < 1".into()));
        }
        Ok(())
    }
}

/// Key files of a generated world.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldPaths {
    pub root: PathBuf,
    pub scene_manifest: PathBuf,
    pub settlement: PathBuf,
    pub landcover: PathBuf,
    pub urban: PathBuf,
    pub atlas: PathBuf,
    pub buildings_geojson: PathBuf,
    pub regions_geojson: PathBuf,
    pub reference_dir: PathBuf,
    pub socio_csv: PathBuf,
    pub groups_csv: PathBuf,
}

// DN ranges per class, (lo, hi) inclusive, for R/G/B and NIR.
const VEG_RGB: (u16, u16) = (400, 800);
const VEG_NIR: (u16, u16) = (5500, 6500);
const DECOY_RGB: (u16, u16) = (3800, 4200);
const DECOY_NIR: (u16, u16) = (4400, 4800);
const BUILDING_RGB: (u16, u16) = (4300, 4500);
const BUILDING_NIR: (u16, u16) = (4600, 4800);

#[derive(Clone, Copy, PartialEq)]
enum Class {
    Vegetation,
    Decoy,
    Building,
}

#[derive(Clone, Copy)]
struct Rect {
    row: usize,
    col: usize,
    w: usize,
    h: usize,
}

impl Rect {
    fn separated_from(&self, other: &Rect, gap: usize) -> bool {
        self.col + self.w + gap <= other.col
            || other.col + other.w + gap <= self.col
            || self.row + self.h + gap <= other.row
            || other.row + other.h + gap <= self.row
    }
}

fn place_rects(rng: &mut ChaCha8Rng, count: usize, size: (usize, usize)) -> Vec<Rect> {
    let mut rects: Vec<Rect> = Vec::with_capacity(count);
    let mut attempts = 0;
    while rects.len() < count && attempts < count * 200 {
        attempts += 1;
        let w = rng.gen_range(size.0..=size.1);
        let h = rng.gen_range(size.0..=size.1);
        let col = rng.gen_range(3..CELL_PIXELS - 3 - w);
        let row = rng.gen_range(3..CELL_PIXELS - 3 - h);
        let r = Rect { row, col, w, h };
        if rects.iter().all(|o| r.separated_from(o, 3)) {
            rects.push(r);
        }
    }
    rects
}

fn cell_transform(cell: GridCell) -> GeoTransform {
    let b = cell.bbox();
    GeoTransform::new(
        b.min_lon,
        b.max_lat,
        (b.max_lon - b.min_lon) / CELL_PIXELS as f64,
        (b.max_lat - b.min_lat) / CELL_PIXELS as f64,
    )
    .expect("cell pixel size is positive")
}

fn draw(rng: &mut ChaCha8Rng, range: (u16, u16)) -> u16 {
    rng.gen_range(range.0..=range.1)
}

/// Renders one scene over a column slice of a cell: 4 bands (R,G,B,NIR),
/// one independent draw per pixel from the class's DN range.
fn render_scene(
    rng: &mut ChaCha8Rng,
    classes: &[Class],
    transform: &GeoTransform,
    col0: usize,
    col1: usize,
) -> RasterGrid {
    let w = col1 - col0;
    let h = CELL_PIXELS;
    let mut values = vec![0u16; w * h * 4];
    for row in 0..h {
        for col in col0..col1 {
            let class = classes[row * CELL_PIXELS + col];
            let (rgb, nir) = match class {
                Class::Vegetation => (VEG_RGB, VEG_NIR),
                Class::Decoy => (DECOY_RGB, DECOY_NIR),
                Class::Building => (BUILDING_RGB, BUILDING_NIR),
            };
            let idx = row * w + (col - col0);
            for band in 0..3 {
                values[band * w * h + idx] = draw(rng, rgb);
            }
            values[3 * w * h + idx] = draw(rng, nir);
        }
    }
    let t = GeoTransform::new(
        transform.origin_lon + col0 as f64 * transform.pixel_width,
        transform.origin_lat,
        transform.pixel_width,
        transform.pixel_height,
    )
    .expect("positive pixel size");
    RasterGrid::new(w, h, 4, Samples::U16(values), Some(0.0), t).expect("consistent buffer")
}

fn constant_scene(transform: &GeoTransform, dn: u16) -> RasterGrid {
    let n = CELL_PIXELS * CELL_PIXELS;
    RasterGrid::new(
        CELL_PIXELS,
        CELL_PIXELS,
        4,
        Samples::U16(vec![dn; n * 4]),
        Some(0.0),
        *transform,
    )
    .expect("consistent buffer")
}

fn ring_json(b: &GeoBox) -> serde_json::Value {
    serde_json::json!([[
        [b.min_lon, b.min_lat],
        [b.max_lon, b.min_lat],
        [b.max_lon, b.max_lat],
        [b.min_lon, b.max_lat],
        [b.min_lon, b.min_lat]
    ]])
}

fn feature_json(source: &str, ring: serde_json::Value) -> serde_json::Value {
    serde_json::json!({
        "type": "Feature",
        "properties": { "source": source },
        "geometry": { "type": "Polygon", "coordinates": ring }
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn rect_box(t: &GeoTransform, r: &Rect) -> GeoBox {
    GeoBox {
        min_lon: t.origin_lon + r.col as f64 * t.pixel_width,
        max_lon: t.origin_lon + (r.col + r.w) as f64 * t.pixel_width,
        min_lat: t.origin_lat - (r.row + r.h) as f64 * t.pixel_height,
        max_lat: t.origin_lat - r.row as f64 * t.pixel_height,
    }
}

/// Generates the complete synthetic world under `out`. Two runs with the
/// same spec produce byte-identical trees.
pub fn generate_world(spec: &SyntheticWorldSpec, out: &Path) -> Result<WorldPaths> {
    spec.validate()?;
    let scenes_dir = out.join("scenes");
    let reference_dir = out.join("reference");
    std::fs::create_dir_all(&scenes_dir)?;
    std::fs::create_dir_all(&reference_dir)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cells: Vec<GridCell> = (0..spec.n_cells).map(|i| GridCell { i: i as i64, j: 0 }).collect();

    let world_box = GeoBox {
        min_lon: cells[0].bbox().min_lon,
        min_lat: cells[0].bbox().min_lat,
        max_lon: cells[spec.n_cells - 1].bbox().max_lon,
        max_lat: cells[0].bbox().max_lat,
    };

    // world-grid rasters at image resolution
    let world_w = CELL_PIXELS * spec.n_cells;
    let world_h = CELL_PIXELS;
    let world_t = GeoTransform::new(
        world_box.min_lon,
        world_box.max_lat,
        (world_box.max_lon - world_box.min_lon) / world_w as f64,
        (world_box.max_lat - world_box.min_lat) / world_h as f64,
    )?;
    let mut landcover_px = vec![landcover::FOREST; world_w * world_h];
    let mut urban_px = vec![0u8; world_w * world_h];

    // settlement raster at 0.01°
    let settle_w = 20 * spec.n_cells;
    let settle_h = 20;
    let settle_t = GeoTransform::new(
        world_box.min_lon,
        world_box.max_lat,
        SETTLEMENT_PIXEL_DEG,
        SETTLEMENT_PIXEL_DEG,
    )?;
    let mut settle_px = vec![0u8; settle_w * settle_h];

    let mut manifest: Vec<SceneRecord> = Vec::new();
    let mut building_features = Vec::new();
    let mut region_features = Vec::new();
    let mut socio_rows: Vec<(String, f64)> = Vec::new();
    let mut groups_rows: Vec<(String, String, String)> = Vec::new();

    let n_decoys = if spec.cloud_scene_fraction <= 0.0 {
        0
    } else {
        let f = spec.cloud_scene_fraction;
        (2.0 * f / (1.0 - f)).round() as usize
    };

    for (idx, &cell) in cells.iter().enumerate() {
        let t = cell_transform(cell);
        let region_id = format!("C{idx:02}");
        let cell_name = format!("{}_{}", cell.j, cell.i);

        // buildings: counts fan out across cells so areas differ
        let factor = if spec.n_cells == 1 {
            1.0
        } else {
            0.6 + 0.8 * idx as f64 / (spec.n_cells - 1) as f64
        };
        let count = (spec.buildings_per_cell as f64 * factor).round() as usize;
        let rects = place_rects(&mut rng, count, spec.building_size_range);

        // per-pixel classes: background veg/decoy, rectangles on top
        let mut classes = vec![Class::Vegetation; CELL_PIXELS * CELL_PIXELS];
        for c in classes.iter_mut() {
            if rng.gen::<f64>() >= spec.vegetation_fraction {
                *c = Class::Decoy;
            }
        }
        for r in &rects {
            for row in r.row..r.row + r.h {
                for col in r.col..r.col + r.w {
                    classes[row * CELL_PIXELS + col] = Class::Building;
                }
            }
        }

        // land cover, urban (rectangles dilated by 2 px), reference mask
        let mut reference_px = vec![0u8; CELL_PIXELS * CELL_PIXELS];
        for (p, class) in classes.iter().enumerate() {
            let (row, col) = (p / CELL_PIXELS, p % CELL_PIXELS);
            let wp = row * world_w + idx * CELL_PIXELS + col;
            landcover_px[wp] = match class {
                Class::Vegetation => landcover::FOREST,
                Class::Decoy => landcover::GRASS,
                Class::Building => landcover::IMPERVIOUS,
            };
            if *class == Class::Building {
                reference_px[p] = 1;
            }
        }
        for r in &rects {
            for row in r.row.saturating_sub(2)..(r.row + r.h + 2).min(CELL_PIXELS) {
                for col in r.col.saturating_sub(2)..(r.col + r.w + 2).min(CELL_PIXELS) {
                    urban_px[row * world_w + idx * CELL_PIXELS + col] = 1;
                }
            }
        }

        // settlement: coarse pixels whose center falls in a rectangle,
        // plus each rectangle's centroid pixel so tiny buildings still
        // register
        let boxes: Vec<GeoBox> = rects.iter().map(|r| rect_box(&t, r)).collect();
        for srow in 0..settle_h {
            for scol in 0..settle_w {
                let (lon, lat) = settle_t.pixel_center(srow, scol);
                if boxes.iter().any(|b| {
                    lon > b.min_lon && lon < b.max_lon && lat > b.min_lat && lat < b.max_lat
                }) {
                    settle_px[srow * settle_w + scol] = 1;
                }
            }
        }
        for b in &boxes {
            let (clon, clat) = ((b.min_lon + b.max_lon) / 2.0, (b.min_lat + b.max_lat) / 2.0);
            let (srow, scol) = settle_t.pixel_of(clon, clat);
            if srow >= 0 && scol >= 0 && (srow as usize) < settle_h && (scol as usize) < settle_w {
                settle_px[srow as usize * settle_w + scol as usize] = 1;
            }
        }

        for (k, b) in boxes.iter().enumerate() {
            building_features.push(feature_json(&format!("B{idx:02}_{k:02}"), ring_json(b)));
        }
        region_features.push(feature_json(&region_id, ring_json(&cell.bbox())));

        // two clean overlapping 2019 scenes covering the cell
        let west_cols = (0, CELL_PIXELS * 5 / 8); // [0, 160)
        let east_cols = (CELL_PIXELS * 3 / 8, CELL_PIXELS); // [96, 256)
        for (tag, (c0, c1)) in [("west19", west_cols), ("east19", east_cols)] {
            let scene = render_scene(&mut rng, &classes, &t, c0, c1);
            let scene_id = format!("{region_id}_{tag}");
            let file = format!("{scene_id}.tif");
            write_raster_deflate(&scenes_dir.join(&file), &scene)?;
            manifest.push(SceneRecord {
                scene_id,
                footprint: scene.extent(),
                cloud_pct: rng.gen_range(0.0..5.0),
                haze_pct: rng.gen_range(0.0..5.0),
                year: 2019,
                kind: SceneKind::SurfaceReflectance,
                path: PathBuf::from(format!("scenes/{file}")),
            });
        }

        // cloudy decoys: flat gray, disqualified by the cloud gate
        for k in 0..n_decoys {
            let scene = constant_scene(&t, 3000);
            let scene_id = format!("{region_id}_cloud{k}");
            let file = format!("{scene_id}.tif");
            write_raster_deflate(&scenes_dir.join(&file), &scene)?;
            manifest.push(SceneRecord {
                scene_id,
                footprint: scene.extent(),
                cloud_pct: rng.gen_range(15.0..75.0),
                haze_pct: rng.gen_range(0.0..5.0),
                year: 2019,
                kind: SceneKind::SurfaceReflectance,
                path: PathBuf::from(format!("scenes/{file}")),
            });
        }

        // a clean 2018 scene that full 2019 coverage must leave unused
        let scene = constant_scene(&t, 2800);
        let scene_id = format!("{region_id}_old18");
        let file = format!("{scene_id}.tif");
        write_raster_deflate(&scenes_dir.join(&file), &scene)?;
        manifest.push(SceneRecord {
            scene_id,
            footprint: scene.extent(),
            cloud_pct: rng.gen_range(0.0..5.0),
            haze_pct: rng.gen_range(0.0..5.0),
            year: 2018,
            kind: SceneKind::SurfaceReflectance,
            path: PathBuf::from(format!("scenes/{file}")),
        });

        // reference mask
        let reference =
            RasterGrid::single_band(CELL_PIXELS, CELL_PIXELS, Samples::U8(reference_px), Some(255.0), t)?;
        write_raster_deflate(&reference_dir.join(format!("{cell_name}.tif")), &reference)?;

        let noise = 1.0 + rng.gen_range(-0.01..0.01);
        let area = building_area(&reference)?;
        socio_rows.push((region_id.clone(), area * noise));

        let city = if idx < spec.n_cells.div_ceil(2) { "westburg" } else { "eastville" };
        groups_rows.push((cell_name, city.to_string(), "synthetica".to_string()));
    }

    // world-spanning basemap, present but never needed at full coverage
    let basemap_t = GeoTransform::new(
        world_box.min_lon,
        world_box.max_lat,
        (world_box.max_lon - world_box.min_lon) / CELL_PIXELS as f64,
        (world_box.max_lat - world_box.min_lat) / 64.0,
    )?;
    let basemap = RasterGrid::new(
        CELL_PIXELS,
        64,
        4,
        Samples::U16(vec![2600; CELL_PIXELS * 64 * 4]),
        Some(0.0),
        basemap_t,
    )?;
    write_raster_deflate(&scenes_dir.join("world_basemap.tif"), &basemap)?;
    manifest.push(SceneRecord {
        scene_id: "world_basemap".to_string(),
        footprint: basemap.extent(),
        cloud_pct: 0.0,
        haze_pct: 0.0,
        year: 2019,
        kind: SceneKind::Basemap,
        path: PathBuf::from("scenes/world_basemap.tif"),
    });

    // shared rasters
    let settlement_path = out.join("settlement.tif");
    write_raster_deflate(
        &settlement_path,
        &RasterGrid::single_band(settle_w, settle_h, Samples::U8(settle_px), Some(255.0), settle_t)?
    )?;
    let landcover_path = out.join("landcover.tif");
    write_raster_deflate(
        &landcover_path,
        &RasterGrid::single_band(world_w, world_h, Samples::U8(landcover_px), Some(0.0), world_t)?
    )?;
    let urban_path = out.join("urban.tif");
    write_raster_deflate(
        &urban_path,
        &RasterGrid::single_band(world_w, world_h, Samples::U8(urban_px), Some(255.0), world_t)?
    )?;

    // PV atlas: two constant latitude bands over the world plus margin
    let atlas_t = GeoTransform::new(
        world_box.min_lon - 0.1,
        world_box.max_lat + 0.1,
        ATLAS_PIXEL_DEG,
        ATLAS_PIXEL_DEG,
    )?;
    let atlas_w = ((world_box.max_lon - world_box.min_lon + 0.2) / ATLAS_PIXEL_DEG).ceil() as usize;
    let atlas_h = ((world_box.max_lat - world_box.min_lat + 0.2) / ATLAS_PIXEL_DEG).ceil() as usize;
    let mid_lat = (world_box.min_lat + world_box.max_lat) / 2.0;
    let mut atlas_px = vec![0f32; atlas_w * atlas_h];
    for row in 0..atlas_h {
        for col in 0..atlas_w {
            let (_, lat) = atlas_t.pixel_center(row, col);
            atlas_px[row * atlas_w + col] = if lat >= mid_lat { 4.5 } else { 5.5 };
        }
    }
    let atlas_path = out.join("pv_atlas.tif");
    write_raster_deflate(
        &atlas_path,
        &RasterGrid::single_band(atlas_w, atlas_h, Samples::F32(atlas_px), Some(-9999.0), atlas_t)?
    )?;

    // vector + tabular outputs
    let buildings_geojson = out.join("buildings.geojson");
    write_json(
        &buildings_geojson,
        &serde_json::json!({ "type": "FeatureCollection", "features": building_features }),
    )?;
    let regions_geojson = out.join("regions.geojson");
    write_json(
        &regions_geojson,
        &serde_json::json!({ "type": "FeatureCollection", "features": region_features }),
    )?;

    let socio_csv = out.join("socio.csv");
    {
        let mut text = String::from("region_id,population,co2_emission,electricity,energy,gdp,waste\n");
        for (region_id, noisy_area) in &socio_rows {
            text.push_str(region_id);
            for _ in 0..6 {
                // one shared area draw per region, independent jitter per column
                let jitter = 1.0 + rng.gen_range(-0.005..0.005);
                text.push_str(&format!(",{}", 3.0 * noisy_area * jitter));
            }
            text.push('\n');
        }
        std::fs::write(&socio_csv, text)?;
    }

    let groups_csv = out.join("groups.csv");
    {
        let mut text = String::from("patch_id,city,continent\n");
        for (patch, city, continent) in &groups_rows {
            text.push_str(&format!("{patch},{city},{continent}\n"));
        }
        std::fs::write(&groups_csv, text)?;
    }

    let scene_manifest = out.join("scene_manifest.csv");
    write_scene_manifest(&scene_manifest, &manifest)?;

    Ok(WorldPaths {
        root: out.to_path_buf(),
        scene_manifest,
        settlement: settlement_path,
        landcover: landcover_path,
        urban: urban_path,
        atlas: atlas_path,
        buildings_geojson,
        regions_geojson,
        reference_dir,
        socio_csv,
        groups_csv,
    })
}
