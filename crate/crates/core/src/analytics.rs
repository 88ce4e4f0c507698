//! Downstream products: building-density maps on a metric block lattice,
//! building areas and zonal statistics, rooftop solar potential, and
//! socioeconomic regression.
//!
//! Areas accumulate as integer multiples of a fixed quantum (2^-20 m²)
//! so that any regrouping of the same pixels — whole-raster totals versus
//! per-region sums — lands on the identical double.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polygons::{Polygon, PolygonSet};
use crate::raster::{pixel_area_m2, GeoTransform, RasterGrid, Samples, METERS_PER_DEGREE};

pub const DEFAULT_CELL_SIZE_M: f64 = 250.0;

/// Days per year in the solar yield model.
pub const N_DAYS: f64 = 365.0;

/// Latitude band covered by the photovoltaic atlas.
pub const ATLAS_LAT_MIN: f64 = -50.0;
pub const ATLAS_LAT_MAX: f64 = 60.0;

/// Bucket name for building pixels outside every region polygon.
pub const UNASSIGNED_REGION: &str = "unassigned";

pub const DENSITY_NODATA: f64 = -9999.0;

// Area quantum: 2^-20 m². Integer accumulation of quantized pixel areas
// makes sums independent of grouping; one f64 conversion happens at the
// very end. Exact up to 2^53 quanta (~8.6e9 m²), far past desk scale.
const AREA_QUANTUM: f64 = 1.0 / (1 << 20) as f64;

#[inline]
fn quantized_area(area_m2: f64) -> i128 {
    (area_m2 * (1 << 20) as f64).round() as i128
}

#[inline]
fn dequantize(acc: i128) -> f64 {
    acc as f64 * AREA_QUANTUM
}

// ── density ─────────────────────────────────────────────────────────────

/// Aggregation block edge in pixels for a metric cell size.
pub fn block_size(r: &RasterGrid, cell_size_m: f64) -> Result<usize> {
    let pixel_m = r.transform().pixel_width * METERS_PER_DEGREE;
    let block = (cell_size_m / pixel_m).round();
    if block < 1.0 {
        return Err(Error::CellSmallerThanPixel { cell_m: cell_size_m, pixel_m });
    }
    Ok(block as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockCounts {
    pub building: u64,
    pub valid: u64,
}

/// Per-block building/valid pixel counts on the lattice anchored at the
/// raster origin; trailing partial blocks are counted over what they
/// cover. Row-major block order.
pub fn block_counts(buildings: &RasterGrid, cell_size_m: f64) -> Result<(Vec<BlockCounts>, usize, usize)> {
    let block = block_size(buildings, cell_size_m)?;
    let (w, h) = (buildings.width(), buildings.height());
    let bw = w.div_ceil(block);
    let bh = h.div_ceil(block);
    let mut out = vec![BlockCounts { building: 0, valid: 0 }; bw * bh];
    for row in 0..h {
        for col in 0..w {
            if let Some(v) = buildings.value(0, row, col) {
                let cell = &mut out[(row / block) * bw + col / block];
                cell.valid += 1;
                if v != 0.0 {
                    cell.building += 1;
                }
            }
        }
    }
    Ok((out, bw, bh))
}

/// Percentage of building pixels per block; blocks with no valid pixel
/// are nodata.
pub fn density_map(buildings: &RasterGrid, cell_size_m: f64) -> Result<RasterGrid> {
    let block = block_size(buildings, cell_size_m)?;
    let (counts, bw, bh) = block_counts(buildings, cell_size_m)?;
    let mut values = vec![0f32; bw * bh];
    for (i, c) in counts.iter().enumerate() {
        values[i] = if c.valid == 0 {
            DENSITY_NODATA as f32
        } else {
            (100.0 * c.building as f64 / c.valid as f64) as f32
        };
    }
    let t = buildings.transform();
    let transform = GeoTransform {
        origin_lon: t.origin_lon,
        origin_lat: t.origin_lat,
        pixel_width: block as f64 * t.pixel_width,
        pixel_height: block as f64 * t.pixel_height,
    };
    RasterGrid::single_band(bw, bh, Samples::F32(values), Some(DENSITY_NODATA), transform)
}

// ── building area ───────────────────────────────────────────────────────

fn quantized_building_area(buildings: &RasterGrid) -> Result<i128> {
    let mut acc: i128 = 0;
    for row in 0..buildings.height() {
        let mut count: i128 = 0;
        for col in 0..buildings.width() {
            if matches!(buildings.value(0, row, col), Some(v) if v != 0.0) {
                count += 1;
            }
        }
        if count > 0 {
            acc += count * quantized_area(pixel_area_m2(buildings, row)?);
        }
    }
    Ok(acc)
}

/// Total ground area of building pixels, m².
pub fn building_area(buildings: &RasterGrid) -> Result<f64> {
    Ok(dequantize(quantized_building_area(buildings)?))
}

// ── solar potential ─────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolarParams {
    /// m² of rooftop per 1 kW-peak system.
    pub a_p: f64,
    /// System loss fraction.
    pub loss: f64,
    /// kWh/kWp/day assumed where the atlas has no coverage.
    pub pv_default: f64,
}

impl Default for SolarParams {
    fn default() -> Self {
        SolarParams { a_p: 10.0, loss: 0.10, pv_default: 3.5 }
    }
}

impl SolarParams {
    pub fn validate(&self) -> Result<()> {
        if self.a_p <= 0.0 {
            return Err(Error::NonPositiveAp(self.a_p));
        }
        if !(0.0..1.0).contains(&self.loss) {
            return Err(Error::Config(format!("loss {} outside [0,1)", self.loss)));
        }
        if self.pv_default <= 0.0 {
            return Err(Error::Config(format!("pv_default {} must be positive", self.pv_default)));
        }
        Ok(())
    }
}

/// Yearly yield for a building area under a fixed daily PV rate:
/// P = PV * (1 - loss) * (A_b / a_p) * 365, in kWh/year.
pub fn solar_total_from_area(area_m2: f64, pv: f64, params: &SolarParams) -> Result<f64> {
    params.validate()?;
    let n_p = area_m2 / params.a_p;
    Ok(pv * (1.0 - params.loss) * n_p * N_DAYS)
}

fn atlas_rate(atlas: &RasterGrid, lon: f64, lat: f64, params: &SolarParams) -> f64 {
    if !(ATLAS_LAT_MIN..=ATLAS_LAT_MAX).contains(&lat) {
        return params.pv_default;
    }
    let (row, col) = atlas.transform().pixel_of(lon, lat);
    if row < 0 || col < 0 || row as usize >= atlas.height() || col as usize >= atlas.width() {
        return params.pv_default;
    }
    atlas.value(0, row as usize, col as usize).unwrap_or(params.pv_default)
}

/// Yearly rooftop yield per aggregation block, kWh/year. The PV rate is
/// sampled from the atlas at each block center (nearest neighbor), or
/// `pv_default` outside atlas coverage. Blocks with no valid building
/// pixel are nodata.
pub fn solar_potential_map(
    buildings: &RasterGrid,
    atlas: &RasterGrid,
    params: &SolarParams,
    cell_size_m: f64,
) -> Result<RasterGrid> {
    params.validate()?;
    let block = block_size(buildings, cell_size_m)?;
    let (w, h) = (buildings.width(), buildings.height());
    let bw = w.div_ceil(block);
    let bh = h.div_ceil(block);

    // per-block quantized areas and validity
    let mut areas = vec![0i128; bw * bh];
    let mut valid = vec![0u64; bw * bh];
    for row in 0..h {
        let row_area = quantized_area(pixel_area_m2(buildings, row)?);
        for col in 0..w {
            if let Some(v) = buildings.value(0, row, col) {
                let idx = (row / block) * bw + col / block;
                valid[idx] += 1;
                if v != 0.0 {
                    areas[idx] += row_area;
                }
            }
        }
    }

    let t = buildings.transform();
    let transform = GeoTransform {
        origin_lon: t.origin_lon,
        origin_lat: t.origin_lat,
        pixel_width: block as f64 * t.pixel_width,
        pixel_height: block as f64 * t.pixel_height,
    };
    let mut values = vec![0f32; bw * bh];
    for brow in 0..bh {
        for bcol in 0..bw {
            let idx = brow * bw + bcol;
            values[idx] = if valid[idx] == 0 {
                DENSITY_NODATA as f32
            } else {
                let (lon, lat) = transform.pixel_center(brow, bcol);
                let pv = atlas_rate(atlas, lon, lat, params);
                let n_p = dequantize(areas[idx]) / params.a_p;
                (pv * (1.0 - params.loss) * n_p * N_DAYS) as f32
            };
        }
    }
    RasterGrid::single_band(bw, bh, Samples::F32(values), Some(DENSITY_NODATA), transform)
}

// ── zonal statistics ────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct RegionStats {
    pub region_id: String,
    pub building_area_m2: f64,
}

/// Sums building-pixel areas per region by pixel-center containment.
/// A pixel inside several regions counts once, for the lexicographically
/// smallest region id; pixels in no region land in the `unassigned`
/// bucket, which is always present and reported last.
pub fn zonal_building_area(buildings: &RasterGrid, regions: &PolygonSet) -> Result<Vec<RegionStats>> {
    let mut by_id: BTreeMap<&str, Vec<&Polygon>> = BTreeMap::new();
    for p in &regions.polygons {
        p.validate()?;
        by_id.entry(p.source.as_str()).or_default().push(p);
    }
    let bboxes: BTreeMap<&str, Vec<crate::raster::GeoBox>> = by_id
        .iter()
        .map(|(id, polys)| (*id, polys.iter().map(|p| p.bbox()).collect()))
        .collect();

    let mut accs: BTreeMap<&str, i128> = by_id.keys().map(|id| (*id, 0i128)).collect();
    let mut unassigned: i128 = 0;
    for row in 0..buildings.height() {
        let row_area = quantized_area(pixel_area_m2(buildings, row)?);
        for col in 0..buildings.width() {
            if !matches!(buildings.value(0, row, col), Some(v) if v != 0.0) {
                continue;
            }
            let (lon, lat) = buildings.transform().pixel_center(row, col);
            let mut assigned = false;
            for (id, polys) in &by_id {
                let hit = polys.iter().zip(&bboxes[id]).any(|(p, b)| {
                    lon >= b.min_lon
                        && lon <= b.max_lon
                        && lat >= b.min_lat
                        && lat <= b.max_lat
                        && p.contains(lon, lat)
                });
                if hit {
                    *accs.get_mut(id).unwrap() += row_area;
                    assigned = true;
                    break;
                }
            }
            if !assigned {
                unassigned += row_area;
            }
        }
    }

    let mut out: Vec<RegionStats> = accs
        .into_iter()
        .map(|(id, acc)| RegionStats { region_id: id.to_string(), building_area_m2: dequantize(acc) })
        .collect();
    out.push(RegionStats {
        region_id: UNASSIGNED_REGION.to_string(),
        building_area_m2: dequantize(unassigned),
    });
    Ok(out)
}

/// Writes `region_id,building_area_m2` rows in the given order.
pub fn write_region_areas_csv(path: &Path, rows: &[RegionStats]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Csv(e.to_string()))?;
    writer
        .write_record(["region_id", "building_area_m2"])
        .map_err(|e| Error::Csv(e.to_string()))?;
    for r in rows {
        writer
            .write_record([r.region_id.as_str(), &format!("{}", r.building_area_m2)])
            .map_err(|e| Error::Csv(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_region_areas_csv(path: &Path) -> Result<Vec<RegionStats>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Csv(e.to_string()))?;
    let headers: Vec<&str> =
        reader.headers().map_err(|e| Error::Csv(e.to_string()))?.iter().collect();
    if headers != ["region_id", "building_area_m2"] {
        return Err(Error::Csv(format!("unexpected areas header {headers:?}")));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Csv(e.to_string()))?;
        let region_id = record.get(0).unwrap_or("").to_string();
        let area = record
            .get(1)
            .unwrap_or("")
            .parse::<f64>()
            .map_err(|e| Error::Csv(format!("region {region_id:?}: {e}")))?;
        rows.push(RegionStats { region_id, building_area_m2: area });
    }
    Ok(rows)
}

// ── regression ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionResult {
    pub slope: f64,
    pub intercept: f64,
    pub rho: f64,
    pub n: usize,
}

/// Ordinary least squares of y on x with Pearson correlation. Pairs with
/// missing y are dropped first. A constant y gives rho = 0 (no measurable
/// linear association).
pub fn regress(x: &[f64], y: &[Option<f64>]) -> Result<RegressionResult> {
    if x.len() != y.len() {
        return Err(Error::DimsMismatch(x.len(), 1, y.len(), 1));
    }
    let pairs: Vec<(f64, f64)> =
        x.iter().zip(y).filter_map(|(&xv, yv)| yv.map(|yv| (xv, yv))).collect();
    if pairs.len() < 2 {
        return Err(Error::TooFewSamples(pairs.len()));
    }
    let n = pairs.len() as f64;
    let mean_x = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut cov, mut var_x, mut var_y) = (0.0, 0.0, 0.0);
    for (xv, yv) in &pairs {
        let (dx, dy) = (xv - mean_x, yv - mean_y);
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 {
        return Err(Error::ConstantX);
    }
    let slope = cov / var_x;
    let intercept = mean_y - slope * mean_x;
    let rho = if var_y == 0.0 { 0.0 } else { (cov / (var_x * var_y).sqrt()).clamp(-1.0, 1.0) };
    Ok(RegressionResult { slope, intercept, rho, n: pairs.len() })
}

// ── socioeconomic table ─────────────────────────────────────────────────

pub const SOCIO_VARIABLES: [&str; 6] =
    ["population", "co2_emission", "electricity", "energy", "gdp", "waste"];

/// Region id -> six optional variable values, in SOCIO_VARIABLES order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SocioTable {
    pub rows: BTreeMap<String, [Option<f64>; 6]>,
}

pub fn read_socio_csv(path: &Path) -> Result<SocioTable> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Csv(e.to_string()))?;
    let headers = reader.headers().map_err(|e| Error::Csv(e.to_string()))?.clone();
    let expected: Vec<&str> = std::iter::once("region_id").chain(SOCIO_VARIABLES).collect();
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(Error::Csv(format!("unexpected header {got:?}")));
    }
    let mut rows = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Csv(e.to_string()))?;
        let id = record.get(0).unwrap_or("").to_string();
        let mut values = [None; 6];
        for (i, v) in values.iter_mut().enumerate() {
            let field = record.get(i + 1).unwrap_or("").trim();
            if !field.is_empty() {
                *v = Some(field.parse::<f64>().map_err(|e| {
                    Error::Csv(format!("row {id:?} column {}: {e}", SOCIO_VARIABLES[i]))
                })?);
            }
        }
        rows.insert(id, values);
    }
    Ok(SocioTable { rows })
}

/// Regressions of each socioeconomic variable on region building areas.
/// Regions missing from the table are skipped; the unassigned bucket is
/// never regressed.
pub fn regress_socio(
    areas: &[RegionStats],
    table: &SocioTable,
) -> Vec<(String, Result<RegressionResult>)> {
    let joined: Vec<(&RegionStats, &[Option<f64>; 6])> = areas
        .iter()
        .filter(|r| r.region_id != UNASSIGNED_REGION)
        .filter_map(|r| table.rows.get(&r.region_id).map(|row| (r, row)))
        .collect();
    let x: Vec<f64> = joined.iter().map(|(r, _)| r.building_area_m2).collect();
    SOCIO_VARIABLES
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let y: Vec<Option<f64>> = joined.iter().map(|(_, row)| row[i]).collect();
            (name.to_string(), regress(&x, &y))
        })
        .collect()
}
