//! Building-footprint polygons: a GeoJSON subset (Polygon / MultiPolygon,
//! bare or wrapped in Feature / FeatureCollection), even-odd point-in-
//! polygon tests, and rasterization onto a pixel frame.

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::raster::{GeoBox, GeoTransform, RasterGrid, Samples};

/// One polygon: an outer ring plus optional holes, all closed.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub outer: Vec<(f64, f64)>,
    pub holes: Vec<Vec<(f64, f64)>>,
    pub source: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PolygonSet {
    pub polygons: Vec<Polygon>,
}

// Serde mirror of the GeoJSON subset we accept.
#[derive(Deserialize)]
#[serde(tag = "type")]
enum GeoJson {
    FeatureCollection { features: Vec<Feature> },
    Feature(Feature),
    Polygon { coordinates: Vec<Vec<[f64; 2]>> },
    MultiPolygon { coordinates: Vec<Vec<Vec<[f64; 2]>>> },
}

#[derive(Deserialize)]
struct Feature {
    geometry: Geometry,
    #[serde(default)]
    properties: Option<serde_json::Value>,
}

#[derive(Deserialize)]
#[serde(tag = "type")]
enum Geometry {
    Polygon { coordinates: Vec<Vec<[f64; 2]>> },
    MultiPolygon { coordinates: Vec<Vec<Vec<[f64; 2]>>> },
}

fn ring_of(coords: &[[f64; 2]]) -> Result<Vec<(f64, f64)>> {
    if coords.len() < 4 {
        return Err(Error::BadGeoJson(format!("ring with {} vertices", coords.len())));
    }
    if coords.first() != coords.last() {
        return Err(Error::UnclosedRing);
    }
    Ok(coords.iter().map(|c| (c[0], c[1])).collect())
}

fn polygon_of(rings: &[Vec<[f64; 2]>], source: String) -> Result<Polygon> {
    let outer = ring_of(rings.first().ok_or_else(|| {
        Error::BadGeoJson("polygon without rings".into())
    })?)?;
    let holes = rings[1..].iter().map(|r| ring_of(r)).collect::<Result<Vec<_>>>()?;
    Ok(Polygon { outer, holes, source })
}

fn feature_source(f: &Feature, index: usize) -> String {
    f.properties
        .as_ref()
        .and_then(|p| p.get("source").or_else(|| p.get("id")))
        .and_then(|v| v.as_str().map(str::to_string).or_else(|| v.as_i64().map(|n| n.to_string())))
        .unwrap_or_else(|| index.to_string())
}

impl PolygonSet {
    pub fn from_geojson(text: &str) -> Result<PolygonSet> {
        let parsed: GeoJson =
            serde_json::from_str(text).map_err(|e| Error::BadGeoJson(e.to_string()))?;
        let mut polygons = Vec::new();
        let mut push_geometry = |g: &Geometry, source: String| -> Result<()> {
            match g {
                Geometry::Polygon { coordinates } => {
                    polygons.push(polygon_of(coordinates, source)?);
                }
                Geometry::MultiPolygon { coordinates } => {
                    for rings in coordinates {
                        polygons.push(polygon_of(rings, source.clone())?);
                    }
                }
            }
            Ok(())
        };
        match &parsed {
            GeoJson::FeatureCollection { features } => {
                for (i, f) in features.iter().enumerate() {
                    push_geometry(&f.geometry, feature_source(f, i))?;
                }
            }
            GeoJson::Feature(f) => push_geometry(&f.geometry, feature_source(f, 0))?,
            GeoJson::Polygon { coordinates } => {
                polygons.push(polygon_of(coordinates, "0".into())?);
            }
            GeoJson::MultiPolygon { coordinates } => {
                for rings in coordinates {
                    polygons.push(polygon_of(rings, "0".into())?);
                }
            }
        }
        Ok(PolygonSet { polygons })
    }

    pub fn len(&self) -> usize {
        self.polygons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.polygons.is_empty()
    }
}

/// Ray-cast crossing count of one ring (closed vertex list).
fn crossings(ring: &[(f64, f64)], lon: f64, lat: f64) -> usize {
    let mut count = 0;
    for w in ring.windows(2) {
        let ((x1, y1), (x2, y2)) = (w[0], w[1]);
        if (y1 > lat) != (y2 > lat) {
            let x_cross = x1 + (lat - y1) / (y2 - y1) * (x2 - x1);
            if lon < x_cross {
                count += 1;
            }
        }
    }
    count
}

impl Polygon {
    /// Even-odd containment over outer ring and holes together: an odd
    /// total crossing count means inside.
    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        let mut total = crossings(&self.outer, lon, lat);
        for hole in &self.holes {
            total += crossings(hole, lon, lat);
        }
        total % 2 == 1
    }

    pub fn bbox(&self) -> GeoBox {
        let mut b = GeoBox::new(f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for &(x, y) in &self.outer {
            b.min_lon = b.min_lon.min(x);
            b.max_lon = b.max_lon.max(x);
            b.min_lat = b.min_lat.min(y);
            b.max_lat = b.max_lat.max(y);
        }
        b
    }

    pub fn validate(&self) -> Result<()> {
        let closed = |ring: &[(f64, f64)]| ring.len() >= 4 && ring.first() == ring.last();
        if !closed(&self.outer) || self.holes.iter().any(|h| !closed(h)) {
            return Err(Error::UnclosedRing);
        }
        Ok(())
    }
}

/// Burns the polygon set onto a binary u8 raster: a pixel is 1 iff its
/// center is inside any polygon under the even-odd rule.
pub fn rasterize(
    set: &PolygonSet,
    transform: GeoTransform,
    width: usize,
    height: usize,
) -> Result<RasterGrid> {
    for p in &set.polygons {
        p.validate()?;
    }
    let mut out = vec![0u8; width * height];
    for p in &set.polygons {
        let b = p.bbox();
        for row in 0..height {
            for col in 0..width {
                if out[row * width + col] == 1 {
                    continue;
                }
                let (lon, lat) = transform.pixel_center(row, col);
                if lon < b.min_lon || lon > b.max_lon || lat < b.min_lat || lat > b.max_lat {
                    continue;
                }
                if p.contains(lon, lat) {
                    out[row * width + col] = 1;
                }
            }
        }
    }
    RasterGrid::single_band(width, height, Samples::U8(out), None, transform)
}
