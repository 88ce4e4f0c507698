//! `gbm` — command-line front end for the building-map toolkit.
//!
//! Each subcommand wraps one library stage (calibrate, coregister,
//! labelgen, cut-patches, infer, vote, filter, the analytics commands,
//! evaluate), `run` drives the full pipeline from a JSON config, and
//! `fixtures generate` emits a synthetic desk-scale world to play with.
//!
//! Exit codes: 0 success, 2 configuration or validation error, 3 file
//! IO error, 4 pipeline run where every cell failed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use gbm_core::analytics::{
    self, building_area, density_map, read_region_areas_csv, read_socio_csv, regress_socio,
    solar_potential_map, solar_total_from_area, write_region_areas_csv, zonal_building_area,
    RegionStats, SolarParams,
};
use gbm_core::calibrate::{calibrate, CalibrationMode};
use gbm_core::coregister::{edge_map, estimate_shift};
use gbm_core::ensemble::{binarize, majority_vote, run_segmenters, Segmenter};
use gbm_core::evaluate::{aggregate, confusion, read_groups_csv, write_scores_csv, Aggregation};
use gbm_core::fixtures::{generate_world, SyntheticWorldSpec};
use gbm_core::labelgen::{cut_patches, signed_distance, truncate_and_bin, DEFAULT_BETA};
use gbm_core::pipeline::{run_pipeline, PipelineConfig};
use gbm_core::polygons::{rasterize, PolygonSet};
use gbm_core::postprocess::{align_to, area_aware_filter, FilterRules};
use gbm_core::raster::RasterGrid;

// ── argument surface ────────────────────────────────────────────────────

#[derive(Parser)]
#[command(name = "gbm", version, about = "Building-map pipeline: calibration, segmentation, filtering, analytics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// IQR-clip and normalize a multispectral raster to [0, 1].
    Calibrate(CalibrateArgs),
    /// Estimate the integer pixel shift aligning a mask to an image.
    Coregister(CoregisterArgs),
    /// Burn polygons into truncated signed-distance class labels.
    Labelgen(LabelgenArgs),
    /// Cut an image/label frame into 256x256 patches with an 80/20 split.
    CutPatches(CutPatchesArgs),
    /// Run one or more segmenters over a calibrated image.
    Infer(InferArgs),
    /// Majority-vote a stack of binary masks.
    Vote(VoteArgs),
    /// Remove building pixels that contradict urban and land-cover layers.
    Filter(FilterArgs),
    /// Coarse building-density map (percent built per aggregation cell).
    Density(DensityArgs),
    /// Coarse rooftop solar-potential map (kWh per aggregation cell).
    SolarMap(SolarMapArgs),
    /// Total rooftop solar potential of a building area, printed in kWh.
    SolarTotal(SolarTotalArgs),
    /// Building area per region polygon, written as CSV.
    ZonalArea(ZonalAreaArgs),
    /// Regress socioeconomic variables on per-region building areas.
    Regress(RegressArgs),
    /// Score predicted masks against reference masks per city/continent.
    Evaluate(EvaluateArgs),
    /// Run the full pipeline from a JSON configuration file.
    Run(RunArgs),
    /// Synthetic test-world utilities.
    Fixtures(FixturesArgs),
}

#[derive(Args)]
struct CalibrateArgs {
    /// Input raster.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output raster.
    #[arg(long)]
    out: PathBuf,
    /// Normalization scope: per-scope | per-patch.
    #[arg(long, default_value = "per-scope")]
    mode: String,
}

#[derive(Args)]
struct CoregisterArgs {
    /// Reference image (>= 3 bands).
    #[arg(long)]
    image: PathBuf,
    /// Binary mask to align.
    #[arg(long)]
    mask: PathBuf,
    /// Search window: shifts in [-window, window] on both axes.
    #[arg(long, default_value_t = 16)]
    window: i64,
    /// Text file receiving `dx dy score`.
    #[arg(long = "out-shift")]
    out_shift: PathBuf,
}

#[derive(Args)]
struct LabelgenArgs {
    /// Building footprints, GeoJSON Polygon/MultiPolygon features.
    #[arg(long)]
    polygons: PathBuf,
    /// Raster whose grid the labels are generated on.
    #[arg(long = "frame-like")]
    frame_like: PathBuf,
    /// Distance truncation, pixels.
    #[arg(long, default_value_t = DEFAULT_BETA)]
    beta: f64,
    /// Output label raster (classes 0..=10).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CutPatchesArgs {
    /// Image frame.
    #[arg(long)]
    image: PathBuf,
    /// Label frame on the same grid.
    #[arg(long)]
    labels: PathBuf,
    /// Split-shuffle seed.
    #[arg(long)]
    seed: u64,
    /// Receives images/, labels/, and manifest.csv.
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    /// Calibrated 4-band (R, G, B, NIR) image.
    #[arg(long)]
    image: PathBuf,
    /// Segmenter spec: `baseline` or `exec:<cmd>`. Repeatable.
    #[arg(long = "segmenter", required = true)]
    segmenters: Vec<String>,
    /// Receives s<k>.tif label rasters and s<k>_mask.tif binary masks.
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct VoteArgs {
    /// Minimum number of positive votes.
    #[arg(long, default_value_t = 2)]
    threshold: usize,
    /// Output binary mask.
    #[arg(long)]
    out: PathBuf,
    /// Input binary masks.
    #[arg(required = true)]
    masks: Vec<PathBuf>,
}

#[derive(Args)]
struct FilterArgs {
    /// Binary building mask.
    #[arg(long)]
    buildings: PathBuf,
    /// Urban-extent mask (resampled onto the building grid).
    #[arg(long)]
    urban: PathBuf,
    /// Land-cover class raster (resampled onto the building grid).
    #[arg(long)]
    landcover: PathBuf,
    /// Output filtered mask.
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON file overriding the default class rules.
    #[arg(long)]
    rules: Option<PathBuf>,
}

#[derive(Args)]
struct DensityArgs {
    /// Binary building mask.
    #[arg(long)]
    buildings: PathBuf,
    /// Output density raster.
    #[arg(long)]
    out: PathBuf,
    /// Aggregation cell edge, meters.
    #[arg(long = "cell-size-m", default_value_t = analytics::DEFAULT_CELL_SIZE_M)]
    cell_size_m: f64,
}

#[derive(Args)]
struct SolarMapArgs {
    /// Binary building mask.
    #[arg(long)]
    buildings: PathBuf,
    /// PV power-potential atlas, kWh/kWp daily rate.
    #[arg(long)]
    atlas: PathBuf,
    /// Output solar-potential raster.
    #[arg(long)]
    out: PathBuf,
    /// Aggregation cell edge, meters.
    #[arg(long = "cell-size-m", default_value_t = analytics::DEFAULT_CELL_SIZE_M)]
    cell_size_m: f64,
    /// Rooftop area per kWp installed, m².
    #[arg(long = "a-p", default_value_t = 10.0)]
    a_p: f64,
    /// System loss fraction.
    #[arg(long, default_value_t = 0.10)]
    loss: f64,
    /// Rate used where the atlas has no data, kWh/kWp daily.
    #[arg(long = "pv-default", default_value_t = 3.5)]
    pv_default: f64,
}

#[derive(Args)]
struct SolarTotalArgs {
    /// Building area, m².
    #[arg(long = "area-m2", required_unless_present = "buildings", conflicts_with = "buildings")]
    area_m2: Option<f64>,
    /// Binary building mask to take the area from instead.
    #[arg(long)]
    buildings: Option<PathBuf>,
    /// PV power potential, kWh/kWp daily rate.
    #[arg(long)]
    pv: f64,
    /// Rooftop area per kWp installed, m².
    #[arg(long = "a-p", default_value_t = 10.0)]
    a_p: f64,
    /// System loss fraction.
    #[arg(long, default_value_t = 0.10)]
    loss: f64,
}

#[derive(Args)]
struct ZonalAreaArgs {
    /// Binary building mask.
    #[arg(long)]
    buildings: PathBuf,
    /// Region polygons, GeoJSON with an id per feature.
    #[arg(long)]
    regions: PathBuf,
    /// Output CSV `region_id,building_area_m2`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RegressArgs {
    /// Region areas CSV (`region_id,building_area_m2`, zonal-area output).
    #[arg(long)]
    areas: PathBuf,
    /// Socioeconomic table CSV.
    #[arg(long)]
    socio: PathBuf,
    /// Output CSV `variable,slope,intercept,rho,n`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory of predicted masks (*.tif, file stem = patch id).
    #[arg(long = "pred-dir")]
    pred_dir: PathBuf,
    /// Directory of reference masks with matching file names.
    #[arg(long = "ref-dir")]
    ref_dir: PathBuf,
    /// Patch grouping CSV `patch_id,city,continent`.
    #[arg(long)]
    groups: PathBuf,
    /// Output CSV `scope,scope_id,n_patches,f1,iou`.
    #[arg(long)]
    out: PathBuf,
    /// Score pooling within a group: micro | macro.
    #[arg(long, default_value = "micro")]
    aggregation: String,
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline configuration, JSON.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct FixturesArgs {
    #[command(subcommand)]
    command: FixturesCommand,
}

#[derive(Subcommand)]
enum FixturesCommand {
    /// Generate a synthetic world: scenes, layers, truth, and a ready
    /// pipeline_config.json.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// World seed.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "fixtures")]
    out: PathBuf,
    /// Number of 0.2° grid cells.
    #[arg(long = "n-cells", default_value_t = 4)]
    n_cells: usize,
    /// Mean planted buildings per cell.
    #[arg(long = "buildings-per-cell", default_value_t = 24)]
    buildings_per_cell: usize,
}

// ── entry point and exit codes ──────────────────────────────────────────

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("gbm: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// 3 for file-level IO trouble, 2 for everything the user can fix in
/// arguments, configuration, or input semantics.
fn exit_code(err: &anyhow::Error) -> u8 {
    use gbm_core::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Io(_)
                | E::MalformedHeader { .. }
                | E::UnknownDtype(_)
                | E::PayloadSize { .. }
                | E::Tiff(_)
                | E::UnsupportedTiff(_) => 3,
                _ => 2,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    2
}

fn dispatch(command: Command) -> anyhow::Result<u8> {
    match command {
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Coregister(a) => cmd_coregister(a),
        Command::Labelgen(a) => cmd_labelgen(a),
        Command::CutPatches(a) => cmd_cut_patches(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Vote(a) => cmd_vote(a),
        Command::Filter(a) => cmd_filter(a),
        Command::Density(a) => cmd_density(a),
        Command::SolarMap(a) => cmd_solar_map(a),
        Command::SolarTotal(a) => cmd_solar_total(a),
        Command::ZonalArea(a) => cmd_zonal_area(a),
        Command::Regress(a) => cmd_regress(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Run(a) => cmd_run(a),
        Command::Fixtures(a) => match a.command {
            FixturesCommand::Generate(g) => cmd_fixtures_generate(g),
        },
    }
}

// ── small IO wrappers with path context ─────────────────────────────────

fn read_raster(path: &Path) -> anyhow::Result<RasterGrid> {
    gbm_core::io::read_raster(path).with_context(|| format!("reading {}", path.display()))
}

fn write_raster(path: &Path, grid: &RasterGrid) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    gbm_core::io::write_raster_deflate(path, grid)
        .with_context(|| format!("writing {}", path.display()))
}

fn read_text(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn read_polygons(path: &Path) -> anyhow::Result<PolygonSet> {
    let text = read_text(path)?;
    PolygonSet::from_geojson(&text).with_context(|| format!("parsing {}", path.display()))
}

// ── stage commands ──────────────────────────────────────────────────────

fn cmd_calibrate(a: CalibrateArgs) -> anyhow::Result<u8> {
    let mode = CalibrationMode::parse(&a.mode)?;
    let raster = read_raster(&a.input)?;
    let out = calibrate(&raster, mode)?;
    write_raster(&a.out, &out)?;
    Ok(0)
}

fn cmd_coregister(a: CoregisterArgs) -> anyhow::Result<u8> {
    let image = edge_map(&read_raster(&a.image)?)?;
    let mask = edge_map(&read_raster(&a.mask)?)?;
    let shift = estimate_shift(&image, &mask, a.window)?;
    let line = format!("{} {} {}", shift.dx, shift.dy, shift.score);
    std::fs::write(&a.out_shift, format!("{line}\n"))
        .with_context(|| format!("writing {}", a.out_shift.display()))?;
    println!("{line}");
    Ok(0)
}

fn cmd_labelgen(a: LabelgenArgs) -> anyhow::Result<u8> {
    let polygons = read_polygons(&a.polygons)?;
    let frame = read_raster(&a.frame_like)?;
    let mask = rasterize(&polygons, *frame.transform(), frame.width(), frame.height())?;
    let distance = signed_distance(&mask)?;
    let labels = truncate_and_bin(&distance, a.beta)?;
    write_raster(&a.out, &labels)?;
    Ok(0)
}

fn cmd_cut_patches(a: CutPatchesArgs) -> anyhow::Result<u8> {
    let image = read_raster(&a.image)?;
    let labels = read_raster(&a.labels)?;
    let patches = cut_patches(&image, &labels, a.seed)?;
    let mut manifest = String::from("patch_id,row,col,split\n");
    for p in &patches {
        write_raster(&a.out_dir.join("images").join(format!("{}.tif", p.patch_id)), &p.image)?;
        write_raster(&a.out_dir.join("labels").join(format!("{}.tif", p.patch_id)), &p.labels)?;
        manifest.push_str(&format!("{},{},{},{}\n", p.patch_id, p.row, p.col, p.split.name()));
    }
    let manifest_path = a.out_dir.join("manifest.csv");
    std::fs::write(&manifest_path, manifest)
        .with_context(|| format!("writing {}", manifest_path.display()))?;
    Ok(0)
}

fn cmd_infer(a: InferArgs) -> anyhow::Result<u8> {
    let segmenters = a
        .segmenters
        .iter()
        .map(|s| Segmenter::parse(s))
        .collect::<gbm_core::Result<Vec<_>>>()?;
    let image = read_raster(&a.image)?;
    let outputs = run_segmenters(&image, &segmenters)?;
    for (k, labels) in outputs.iter().enumerate() {
        write_raster(&a.out_dir.join(format!("s{k}.tif")), labels)?;
        write_raster(&a.out_dir.join(format!("s{k}_mask.tif")), &binarize(labels)?)?;
    }
    Ok(0)
}

fn cmd_vote(a: VoteArgs) -> anyhow::Result<u8> {
    let masks = a.masks.iter().map(|p| read_raster(p)).collect::<anyhow::Result<Vec<_>>>()?;
    let refs: Vec<&RasterGrid> = masks.iter().collect();
    let voted = majority_vote(&refs, a.threshold)?;
    write_raster(&a.out, &voted)?;
    Ok(0)
}

fn cmd_filter(a: FilterArgs) -> anyhow::Result<u8> {
    let rules = match &a.rules {
        Some(path) => serde_json::from_str::<FilterRules>(&read_text(path)?)
            .with_context(|| format!("parsing {}", path.display()))?,
        None => FilterRules::default(),
    };
    let buildings = read_raster(&a.buildings)?;
    let urban = align_to(&read_raster(&a.urban)?, &buildings)?;
    let landcover = align_to(&read_raster(&a.landcover)?, &buildings)?;
    let filtered = area_aware_filter(&buildings, &urban, &landcover, &rules)?;
    write_raster(&a.out, &filtered)?;
    Ok(0)
}

// ── analytics commands ──────────────────────────────────────────────────

fn cmd_density(a: DensityArgs) -> anyhow::Result<u8> {
    let buildings = read_raster(&a.buildings)?;
    let density = density_map(&buildings, a.cell_size_m)?;
    write_raster(&a.out, &density)?;
    Ok(0)
}

fn cmd_solar_map(a: SolarMapArgs) -> anyhow::Result<u8> {
    let params = SolarParams { a_p: a.a_p, loss: a.loss, pv_default: a.pv_default };
    let buildings = read_raster(&a.buildings)?;
    let atlas = read_raster(&a.atlas)?;
    let map = solar_potential_map(&buildings, &atlas, &params, a.cell_size_m)?;
    write_raster(&a.out, &map)?;
    Ok(0)
}

fn cmd_solar_total(a: SolarTotalArgs) -> anyhow::Result<u8> {
    let params = SolarParams { a_p: a.a_p, loss: a.loss, ..SolarParams::default() };
    let area = match (a.area_m2, &a.buildings) {
        (Some(area), _) => area,
        (None, Some(path)) => building_area(&read_raster(path)?)?,
        (None, None) => unreachable!("clap enforces one of --area-m2/--buildings"),
    };
    let total = solar_total_from_area(area, a.pv, &params)?;
    println!("{total}");
    Ok(0)
}

fn cmd_zonal_area(a: ZonalAreaArgs) -> anyhow::Result<u8> {
    let buildings = read_raster(&a.buildings)?;
    let regions = read_polygons(&a.regions)?;
    let rows = zonal_building_area(&buildings, &regions)?;
    write_region_areas_csv(&a.out, &rows)?;
    Ok(0)
}

fn cmd_regress(a: RegressArgs) -> anyhow::Result<u8> {
    let areas: Vec<RegionStats> = read_region_areas_csv(&a.areas)?;
    let table = read_socio_csv(&a.socio)?;
    let mut text = String::from("variable,slope,intercept,rho,n\n");
    for (variable, result) in regress_socio(&areas, &table) {
        match result {
            Ok(r) => {
                text.push_str(&format!("{variable},{},{},{},{}\n", r.slope, r.intercept, r.rho, r.n))
            }
            Err(_) => text.push_str(&format!("{variable},,,,0\n")),
        }
    }
    std::fs::write(&a.out, text).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(0)
}

// ── evaluation ──────────────────────────────────────────────────────────

fn cmd_evaluate(a: EvaluateArgs) -> anyhow::Result<u8> {
    let mode = match a.aggregation.as_str() {
        "micro" => Aggregation::Micro,
        "macro" => Aggregation::Macro,
        other => anyhow::bail!(gbm_core::Error::Config(format!("unknown aggregation {other:?}"))),
    };
    let groups = read_groups_csv(&a.groups)?;

    let mut entries: Vec<PathBuf> = std::fs::read_dir(&a.pred_dir)
        .with_context(|| format!("reading {}", a.pred_dir.display()))?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "tif"))
        .collect();
    entries.sort();

    let mut confusions = Vec::with_capacity(entries.len());
    for pred_path in &entries {
        let name = pred_path.file_name().expect("filtered to files");
        let patch_id = pred_path
            .file_stem()
            .expect("filtered to .tif files")
            .to_string_lossy()
            .into_owned();
        let ref_path = a.ref_dir.join(name);
        let pred = read_raster(pred_path)?;
        let reference = read_raster(&ref_path)?;
        confusions.push((patch_id, confusion(&pred, &reference)?));
    }

    let rows = aggregate(&confusions, &groups, mode)?;
    write_scores_csv(&a.out, &rows)?;
    Ok(0)
}

// ── pipeline run ────────────────────────────────────────────────────────

fn cmd_run(a: RunArgs) -> anyhow::Result<u8> {
    let text = read_text(&a.config)?;
    let config = PipelineConfig::from_json(&text)
        .with_context(|| format!("parsing {}", a.config.display()))?;
    let manifest = run_pipeline(&config)?;

    for cell in &manifest.cells {
        println!("cell {}: {}", cell.cell, cell.status);
    }
    if let Some(area) = manifest.building_area_m2 {
        println!("building area: {area} m2");
    }
    println!("manifest: {}", config.out_dir.join("run_manifest.json").display());

    if !manifest.cells.is_empty() && !manifest.any_cell_ok() {
        eprintln!("gbm: all {} cells failed", manifest.cells.len());
        return Ok(4);
    }
    Ok(0)
}

// ── fixtures ────────────────────────────────────────────────────────────

fn cmd_fixtures_generate(a: GenerateArgs) -> anyhow::Result<u8> {
    let spec = SyntheticWorldSpec {
        seed: a.seed,
        n_cells: a.n_cells,
        buildings_per_cell: a.buildings_per_cell,
        ..SyntheticWorldSpec::default()
    };
    let paths = generate_world(&spec, &a.out)?;

    // A ready-to-run configuration pointing at the generated layers.
    let config = PipelineConfig {
        scene_manifest: paths.scene_manifest.clone(),
        settlement: paths.settlement.clone(),
        landcover: paths.landcover.clone(),
        urban: paths.urban.clone(),
        atlas: Some(paths.atlas.clone()),
        regions: Some(paths.regions_geojson.clone()),
        socio: Some(paths.socio_csv.clone()),
        out_dir: a.out.join("run"),
        grid_size_deg: 0.2,
        tile_size_deg: 5.0,
        vote_threshold: 2,
        workers: 1,
        segmenters: vec!["baseline".into(); 4],
        calibration: "per-scope".into(),
        quality_rule: "independent".into(),
        coverage_target: 0.99,
        filter_rules: FilterRules::default(),
        solar: SolarParams::default(),
        cell_size_m: analytics::DEFAULT_CELL_SIZE_M,
        seed: a.seed,
    };
    let config_path = a.out.join("pipeline_config.json");
    let mut json = serde_json::to_string_pretty(&config)?;
    json.push('\n');
    std::fs::write(&config_path, json)
        .with_context(|| format!("writing {}", config_path.display()))?;

    println!("world: {}", paths.root.display());
    println!("config: {}", config_path.display());
    Ok(0)
}
