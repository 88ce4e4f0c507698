//! Acceptance gate: one test per release criterion. Each test prints a
//! single `criterion N: PASS/FAIL` line; a FAIL line is followed by the
//! panic that failed the run. Oracles here are deliberately independent
//! re-derivations (brute force where possible), not calls back into the
//! code under test.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gbm_core::analytics::{
    block_counts, building_area, read_socio_csv, regress, regress_socio, solar_total_from_area,
    zonal_building_area, RegionStats, SolarParams, SOCIO_VARIABLES,
};
use gbm_core::calibrate::{band_quantiles, calibrate, CalibrationMode};
use gbm_core::coregister::{apply_shift, estimate_shift, Shift};
use gbm_core::ensemble::{binarize, majority_vote, MASK_NODATA};
use gbm_core::evaluate::{confusion, f1_iou, Confusion};
use gbm_core::labelgen::{signed_distance, truncate_and_bin};
use gbm_core::polygons::{Polygon, PolygonSet};
use gbm_core::postprocess::{area_aware_filter, FilterRules};
use gbm_core::raster::{GeoTransform, RasterGrid, Samples};

// ── harness ─────────────────────────────────────────────────────────────

fn check<F>(n: usize, what: &str, body: F)
where
    F: FnOnce() + std::panic::UnwindSafe,
{
    match std::panic::catch_unwind(body) {
        Ok(()) => println!("criterion {n}: PASS - {what}"),
        Err(cause) => {
            println!("criterion {n}: FAIL - {what}");
            std::panic::resume_unwind(cause);
        }
    }
}

fn t() -> GeoTransform {
    GeoTransform::new(10.0, 50.0, 0.001, 0.001).unwrap()
}

fn u8_grid(w: usize, h: usize, values: Vec<u8>, nodata: Option<f64>) -> RasterGrid {
    RasterGrid::single_band(w, h, Samples::U8(values), nodata, t()).unwrap()
}

// ── criterion 1: solar band arithmetic ──────────────────────────────────

#[test]
fn criterion_1_solar_band_arithmetic() {
    check(1, "10 vs 30 m2/kWp potentials hold the 3.000 ratio and the 28->84 endpoint", || {
        let started = Instant::now();
        let area_m2 = 0.67e12; // 0.67 million km2 of building area
        let at = |a_p: f64| SolarParams { a_p, loss: 0.10, ..SolarParams::default() };

        let p10 = solar_total_from_area(area_m2, 3.5, &at(10.0)).unwrap();
        let p30 = solar_total_from_area(area_m2, 3.5, &at(30.0)).unwrap();
        assert!(
            (p10 / p30 - 3.0).abs() <= 1e-6,
            "dense/sparse ratio {} not within 1e-6 of 3",
            p10 / p30
        );

        // Rate that lands the conservative end exactly on 28 PWh, by
        // inverting the potential formula algebraically.
        let pv_star = 28.0e12 / ((1.0 - 0.10) * (area_m2 / 30.0) * 365.0);
        let upper = solar_total_from_area(area_m2, pv_star, &at(10.0)).unwrap();
        let target = 84.0e12;
        assert!(
            (upper - target).abs() <= 0.005 * target,
            "optimistic end {upper} kWh not within 0.5% of {target}"
        );
        assert!(started.elapsed().as_secs_f64() < 1.0, "criterion 1 exceeded 1 s");
    });
}

// ── criterion 2: distance labels vs brute force ─────────────────────────

/// All-pairs signed distance: for each pixel, scan every opposite-class
/// pixel and keep the smallest squared offset; saturate at width+height
/// when the opposite class is empty.
fn brute_force_signed(bits: &[bool], w: usize, h: usize) -> Vec<f32> {
    let building: Vec<(i64, i64)> = (0..w * h)
        .filter(|&i| bits[i])
        .map(|i| ((i / w) as i64, (i % w) as i64))
        .collect();
    let background: Vec<(i64, i64)> = (0..w * h)
        .filter(|&i| !bits[i])
        .map(|i| ((i / w) as i64, (i % w) as i64))
        .collect();
    let saturation = (w + h) as f64;
    (0..w * h)
        .map(|i| {
            let (row, col) = ((i / w) as i64, (i % w) as i64);
            let (sign, opposite) =
                if bits[i] { (1.0, &background) } else { (-1.0, &building) };
            let best = opposite
                .iter()
                .map(|&(r, c)| (r - row) * (r - row) + (c - col) * (c - col))
                .min();
            match best {
                Some(sq) => (sign * (sq as f64).sqrt()) as f32,
                None => (sign * saturation) as f32,
            }
        })
        .collect()
}

#[test]
fn criterion_2_distance_labels_match_brute_force() {
    check(2, "signed distances equal the all-pairs oracle and labels binarize back", || {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(0x6bde);
        for case in 0..200 {
            let w = rng.gen_range(1..=64);
            let h = rng.gen_range(1..=64);
            let fill = rng.gen_range(0.05..0.95);
            let bits: Vec<bool> = (0..w * h).map(|_| rng.gen_bool(fill)).collect();
            let mask =
                u8_grid(w, h, bits.iter().map(|&b| u8::from(b)).collect(), None);

            let got = signed_distance(&mask).unwrap();
            let want = brute_force_signed(&bits, w, h);
            for (i, &expected) in want.iter().enumerate() {
                let actual = got.get(0, i / w, i % w) as f32;
                assert_eq!(
                    actual, expected,
                    "case {case} ({w}x{h}) pixel {i}: distance {actual} != oracle {expected}"
                );
            }

            let labels = truncate_and_bin(&got, 10.0).unwrap();
            let back = binarize(&labels).unwrap();
            for i in 0..w * h {
                assert_eq!(
                    back.get(0, i / w, i % w) != 0.0,
                    bits[i],
                    "case {case} pixel {i}: labels did not binarize back to the mask"
                );
            }
        }
        assert!(started.elapsed().as_secs_f64() < 60.0, "criterion 2 exceeded 60 s");
    });
}

// ── criterion 3: coregistration recovery ────────────────────────────────

#[test]
fn criterion_3_coregistration_recovers_random_shifts() {
    check(3, "100/100 random shifts up to |8| recovered exactly with window 16", || {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(0xc03e);
        for case in 0..100 {
            let w = rng.gen_range(40..=56);
            let h = rng.gen_range(40..=56);
            let values: Vec<f32> = (0..w * h).map(|_| rng.gen_range(0.0..1000.0)).collect();
            let img =
                RasterGrid::single_band(w, h, Samples::F32(values), None, t()).unwrap();

            let dx = rng.gen_range(-8..=8i64);
            let dy = rng.gen_range(-8..=8i64);
            // The mask content sits displaced by (-dx,-dy), so it must
            // move by (dx,dy) to line up again.
            let mask = apply_shift(&img, &Shift { dx: -dx, dy: -dy, score: 0.0 }).unwrap();
            let s = estimate_shift(&img, &mask, 16).unwrap();
            assert_eq!(
                (s.dx, s.dy),
                (dx, dy),
                "case {case} ({w}x{h}): shift ({dx},{dy}) came back as ({},{})",
                s.dx,
                s.dy
            );
        }
        assert!(started.elapsed().as_secs_f64() < 60.0, "criterion 3 exceeded 60 s");
    });
}

// ── criterion 4: vote and filter truth tables ───────────────────────────

#[test]
fn criterion_4_vote_truth_table_and_filter_rules() {
    check(4, "all 16 vote combinations and all 20 filter cases match the rules", || {
        let mut positives = 0;
        for combo in 0..16u32 {
            let masks: Vec<RasterGrid> = (0..4)
                .map(|k| u8_grid(1, 1, vec![((combo >> k) & 1) as u8], Some(MASK_NODATA)))
                .collect();
            let refs: Vec<&RasterGrid> = masks.iter().collect();
            let voted = majority_vote(&refs, 2).unwrap();
            let expected = combo.count_ones() >= 2;
            assert_eq!(
                voted.get(0, 0, 0) != 0.0,
                expected,
                "combination {combo:04b} voted wrong"
            );
            positives += usize::from(expected);
        }
        assert_eq!(positives, 11, "vote table should have 11 positive rows");

        // Default class rules: cropland 1, grass 3, shrub 4 are removed in
        // urban areas; only impervious 6 survives outside them; unknown
        // cover is never grounds for removal.
        let rules = FilterRules::default();
        let mut cases = 0;
        for urban in [0u8, 1] {
            for cover in (1..=9).map(Some).chain([None]) {
                let b = u8_grid(1, 1, vec![1], Some(MASK_NODATA));
                let u = u8_grid(1, 1, vec![urban], Some(MASK_NODATA));
                let l = u8_grid(1, 1, vec![cover.unwrap_or(0)], Some(0.0));
                let out = area_aware_filter(&b, &u, &l, &rules).unwrap();
                let expected = match (urban, cover) {
                    (_, None) => true,
                    (1, Some(c)) => !matches!(c, 1 | 3 | 4),
                    (0, Some(c)) => c == 6,
                    _ => unreachable!(),
                };
                assert_eq!(
                    out.get(0, 0, 0) != 0.0,
                    expected,
                    "urban {urban}, cover {cover:?} filtered wrong"
                );
                cases += 1;
            }
        }
        assert_eq!(cases, 20, "rule table should enumerate 20 cases");
    });
}

// ── criterion 5: calibration quantiles vs sort oracle ───────────────────

fn oracle_quantile(sorted: &[f64], p: f64) -> f64 {
    let rank = p * (sorted.len() - 1) as f64;
    let lo = sorted[rank.floor() as usize];
    let hi = sorted[rank.ceil() as usize];
    lo + (hi - lo) * (rank - rank.floor())
}

fn close_rel(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn criterion_5_calibration_matches_quantile_oracle() {
    check(5, "10^4 random arrays match the interpolation oracle; outputs stay in [0,1]", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0xca11);
        for case in 0..10_000 {
            let n = rng.gen_range(1..=200);
            let values: Vec<f64> = (0..n)
                .map(|_| {
                    if rng.gen_bool(0.3) {
                        rng.gen_range(0..50) as f64 // ties on purpose
                    } else {
                        rng.gen_range(-100.0..7000.0)
                    }
                })
                .collect();
            let stats = band_quantiles(&values).unwrap();
            let mut sorted = values.clone();
            sorted.sort_by(|a, b| a.total_cmp(b));
            let q1 = oracle_quantile(&sorted, 0.25);
            let q3 = oracle_quantile(&sorted, 0.75);
            let clip_hi = q3 + 1.5 * (q3 - q1);
            assert!(close_rel(stats.q1, q1), "case {case}: q1 {} vs oracle {q1}", stats.q1);
            assert!(close_rel(stats.q3, q3), "case {case}: q3 {} vs oracle {q3}", stats.q3);
            assert!(
                close_rel(stats.clip_hi(), clip_hi),
                "case {case}: clip_hi {} vs oracle {clip_hi}",
                stats.clip_hi()
            );
        }

        // Normalization range on random rasters, both modes, with nodata.
        for case in 0..20 {
            let (w, h) = (rng.gen_range(3..40), rng.gen_range(3..40));
            let values: Vec<u16> = (0..w * h * 2)
                .map(|_| if rng.gen_bool(0.1) { 0 } else { rng.gen_range(1..9000) })
                .collect();
            let raster = RasterGrid::new(w, h, 2, Samples::U16(values), Some(0.0), t()).unwrap();
            for mode in [CalibrationMode::PerScope, CalibrationMode::PerPatch] {
                let out = calibrate(&raster, mode).unwrap();
                for band in 0..2 {
                    for row in 0..h {
                        for col in 0..w {
                            if let Some(v) = out.value(band, row, col) {
                                assert!(
                                    (0.0..=1.0).contains(&v),
                                    "case {case}: calibrated value {v} outside [0,1]"
                                );
                            }
                        }
                    }
                }
            }
        }

        let stats = band_quantiles(&(1..=10).map(f64::from).collect::<Vec<_>>()).unwrap();
        assert_eq!(stats.clip_hi(), 14.5, "1..10 clip_hi must be exactly 14.5");
    });
}

// ── criterion 6: metrics fixture and homogeneity ────────────────────────

#[test]
fn criterion_6_metrics_fixture_and_micro_homogeneity() {
    check(6, "confusion (2,1,1,0) scores F1 2/3 and IoU 1/2; micro pooling is homogeneous", || {
        let pred = u8_grid(2, 2, vec![1, 1, 1, 0], None);
        let reference = u8_grid(2, 2, vec![1, 1, 0, 1], None);
        let c = confusion(&pred, &reference).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (2, 1, 1, 0));

        let (f1, iou) = f1_iou(&c).unwrap();
        assert!((f1 - 0.6667).abs() <= 1e-4, "F1 {f1} not within 1e-4 of 0.6667");
        assert_eq!(iou, 0.5, "IoU must be exactly 0.5");

        // Pooling k copies of any patch must reproduce the patch score.
        let mut rng = ChaCha8Rng::seed_from_u64(0xf1f1);
        for _ in 0..100 {
            let one = Confusion {
                tp: rng.gen_range(0..50),
                fp: rng.gen_range(0..50),
                fn_: rng.gen_range(0..50),
                tn: rng.gen_range(0..50),
            };
            let mut pooled = Confusion::default();
            for _ in 0..rng.gen_range(2..6) {
                pooled.add(&one);
            }
            assert_eq!(f1_iou(&pooled), f1_iou(&one), "micro pooling changed a score");
        }
    });
}

// ── criterion 7: density and zonal conservation ─────────────────────────

fn rect_region(id: &str, min_lon: f64, min_lat: f64, max_lon: f64, max_lat: f64) -> Polygon {
    Polygon {
        outer: vec![
            (min_lon, min_lat),
            (max_lon, min_lat),
            (max_lon, max_lat),
            (min_lon, max_lat),
            (min_lon, min_lat),
        ],
        holes: Vec::new(),
        source: id.to_string(),
    }
}

#[test]
fn criterion_7_density_and_zonal_conservation() {
    check(7, "block counts and zonal areas conserve the mask totals exactly", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0x70ca1);
        for case in 0..50 {
            let (w, h) = (rng.gen_range(1..150), rng.gen_range(1..150));
            let values: Vec<u8> = (0..w * h)
                .map(|_| {
                    if rng.gen_bool(0.05) {
                        255 // nodata
                    } else {
                        u8::from(rng.gen_bool(0.3))
                    }
                })
                .collect();
            let ones = values.iter().filter(|&&v| v == 1).count() as u64;
            let valid = values.iter().filter(|&&v| v != 255).count() as u64;
            let mask = u8_grid(w, h, values, Some(255.0));

            let cell_m = rng.gen_range(120.0..800.0);
            let (blocks, _, _) = block_counts(&mask, cell_m).unwrap();
            assert_eq!(
                blocks.iter().map(|b| b.building).sum::<u64>(),
                ones,
                "case {case}: block building counts lost pixels"
            );
            assert_eq!(
                blocks.iter().map(|b| b.valid).sum::<u64>(),
                valid,
                "case {case}: block valid counts lost pixels"
            );

            // Random regions: overlapping, disjoint, and partly outside.
            let mut regions = Vec::new();
            for r in 0..rng.gen_range(1..6) {
                let lon0 = 10.0 + rng.gen_range(-0.05..0.12);
                let lat0 = 50.0 - rng.gen_range(-0.05..0.12);
                regions.push(rect_region(
                    &format!("R{r}"),
                    lon0,
                    lat0 - rng.gen_range(0.01..0.08),
                    lon0 + rng.gen_range(0.01..0.08),
                    lat0,
                ));
            }
            let set = PolygonSet { polygons: regions };
            let rows = zonal_building_area(&mask, &set).unwrap();
            let sum: f64 = rows.iter().map(|r| r.building_area_m2).sum();
            let total = building_area(&mask).unwrap();
            assert_eq!(
                sum, total,
                "case {case}: zonal sum {sum} != building area {total}"
            );
        }
    });
}

// ── criterion 8: end-to-end determinism and accuracy ────────────────────

fn gbm(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_gbm"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn gbm")
}

/// Relative path -> bytes for every file under `root`.
fn tree_bytes(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        let mut entries: Vec<PathBuf> =
            std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for path in entries {
            if path.is_dir() {
                walk(&path, root, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn criterion_8_end_to_end_determinism_and_accuracy() {
    check(8, "worker counts 1 and 4 write identical bytes; planted truth recovered at F1 >= 0.95", || {
        let started = Instant::now();
        let dir = tempfile::tempdir().unwrap();
        let cwd = dir.path();

        let generated = gbm(&["fixtures", "generate", "--seed", "7", "--out", "world"], cwd);
        assert!(
            generated.status.success(),
            "fixtures generate failed: {}",
            String::from_utf8_lossy(&generated.stderr)
        );

        let base: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(cwd.join("world/pipeline_config.json")).unwrap())
                .unwrap();
        for (workers, out_dir) in [(1u64, "world/run1"), (4, "world/run4")] {
            let mut config = base.clone();
            config["workers"] = workers.into();
            config["out_dir"] = out_dir.into();
            let path = cwd.join(format!("config{workers}.json"));
            std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
            let run = gbm(&["run", "--config", &format!("config{workers}.json")], cwd);
            assert!(
                run.status.success(),
                "run with {workers} workers failed: {}",
                String::from_utf8_lossy(&run.stderr)
            );
        }

        let run1 = tree_bytes(&cwd.join("world/run1"));
        let run4 = tree_bytes(&cwd.join("world/run4"));
        assert_eq!(
            run1.keys().collect::<Vec<_>>(),
            run4.keys().collect::<Vec<_>>(),
            "worker counts produced different artifact sets"
        );
        for (rel, bytes) in &run1 {
            assert_eq!(
                bytes,
                &run4[rel],
                "artifact {} differs between 1 and 4 workers",
                rel.display()
            );
        }

        // Micro F1 of the filtered masks against the planted truth.
        let mut pooled = Confusion::default();
        let mut cells = 0;
        for (rel, _) in run1.iter().filter(|(p, _)| p.starts_with("filtered")) {
            let pred = gbm_core::io::read_raster(cwd.join("world/run1").join(rel)).unwrap();
            let truth =
                gbm_core::io::read_raster(cwd.join("world/reference").join(rel.file_name().unwrap()))
                    .unwrap();
            pooled.add(&confusion(&pred, &truth).unwrap());
            cells += 1;
        }
        assert!(cells >= 4, "expected at least 4 filtered cell masks, saw {cells}");
        let (f1, _) = f1_iou(&pooled).expect("pooled confusion has positives");
        assert!(f1 >= 0.95, "end-to-end F1 {f1} below 0.95");
        assert!(started.elapsed().as_secs_f64() < 300.0, "criterion 8 exceeded 5 min");
    });
}

// ── criterion 9: regression recovery ────────────────────────────────────

#[test]
fn criterion_9_regression_recovery() {
    check(9, "the planted 3x socioeconomic law is recovered; noiseless data gives rho exactly 1", || {
        let dir = tempfile::tempdir().unwrap();
        let world = gbm_core::fixtures::generate_world(
            &gbm_core::fixtures::SyntheticWorldSpec::default(),
            dir.path(),
        )
        .unwrap();

        // Region building areas measured from the planted reference masks.
        let regions = PolygonSet::from_geojson(
            &std::fs::read_to_string(&world.regions_geojson).unwrap(),
        )
        .unwrap();
        let mut by_region: BTreeMap<String, f64> = BTreeMap::new();
        let mut masks: Vec<PathBuf> = std::fs::read_dir(&world.reference_dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        masks.sort();
        for path in masks {
            let mask = gbm_core::io::read_raster(&path).unwrap();
            for row in zonal_building_area(&mask, &regions).unwrap() {
                *by_region.entry(row.region_id).or_insert(0.0) += row.building_area_m2;
            }
        }
        let areas: Vec<RegionStats> = by_region
            .into_iter()
            .map(|(region_id, building_area_m2)| RegionStats { region_id, building_area_m2 })
            .collect();

        let table = read_socio_csv(&world.socio_csv).unwrap();
        let results = regress_socio(&areas, &table);
        assert_eq!(results.len(), SOCIO_VARIABLES.len());
        for (variable, result) in results {
            let r = result.unwrap_or_else(|e| panic!("{variable} regression failed: {e}"));
            assert!(
                (r.slope - 3.0).abs() <= 0.05 * 3.0,
                "{variable}: slope {} outside 3 +- 5%",
                r.slope
            );
            assert!(r.rho > 0.99, "{variable}: rho {} not above 0.99", r.rho);
        }

        // Noiseless law: integer xs with a power-of-two count keep every
        // intermediate exact, so the correlation is exactly 1.
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<Option<f64>> = x.iter().map(|&v| Some(3.0 * v)).collect();
        let r = regress(&x, &y).unwrap();
        assert_eq!(r.slope, 3.0, "noiseless slope must be exact");
        assert_eq!(r.intercept, 0.0, "noiseless intercept must be exact");
        assert_eq!(r.rho, 1.0, "noiseless rho must be exactly 1.0");
    });
}
