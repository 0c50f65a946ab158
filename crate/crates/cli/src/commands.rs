//! Subcommand implementations.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use plume_core::cube::RadianceCube;
use plume_core::io::{self, Provenance};
use plume_core::lut::{build_synthetic_lut, AbsorptionTable, Continuum, LutAxes, RadianceLut, SceneParams};
use plume_core::quantify::{
    quantify_plume, rasterize_mask, AtmosphereParams, FluxEstimate, PlumePolygon, QuantifyConfig,
    WindRecord,
};
use plume_core::retrieval::{
    matched_filter, MapMetadata, RetrievalMode, RetrievalOptions, TargetInput, TargetProvenance,
};
use plume_core::sensor::{SensorName, SensorSpec};
use plume_core::sim::SimScene;
use plume_core::target::make_fine_slope;
use plume_core::{compare as cmp, rng};

use crate::error::CliError;

/// Input format of `lut-build --axes`.
#[derive(Debug, Serialize, Deserialize)]
struct LutBuildSpec {
    axes: LutAxes,
    continuum: Continuum,
}

pub fn lut_build(cross_section: &Path, axes_path: &Path, out: &Path) -> Result<(), CliError> {
    let absorption = AbsorptionTable::from_csv_file(cross_section)?;
    let spec: LutBuildSpec = io::read_json(axes_path)?;
    let lut = build_synthetic_lut(&absorption, &spec.axes, &spec.continuum)?;
    let provenance = Provenance::new()
        .with_input_file("cross_section", cross_section)?
        .with_input_file("axes", axes_path)?;
    lut.write_file(out, provenance)?;

    println!("wrote {}", out.display());
    for (name, nodes) in [
        ("sensor_altitude_km", &lut.axes.sensor_altitude_km),
        ("water_vapor_gcm2", &lut.axes.water_vapor_gcm2),
        ("ground_elevation_km", &lut.axes.ground_elevation_km),
        ("solar_zenith_deg", &lut.axes.solar_zenith_deg),
        ("ch4_enhancement_ppmm", &lut.axes.ch4_enhancement_ppmm),
    ] {
        println!(
            "  axis {name}: {} nodes in [{}, {}]",
            nodes.len(),
            nodes[0],
            nodes.last().unwrap()
        );
    }
    println!(
        "  wavelengths: {} points in [{}, {}] nm",
        lut.wavelengths_nm.len(),
        lut.wavelengths_nm[0],
        lut.wavelengths_nm.last().unwrap()
    );
    Ok(())
}

fn resolve_sensor_flags(
    name: Option<&str>,
    file: Option<&Path>,
) -> Result<Option<SensorSpec>, CliError> {
    match (name, file) {
        (Some(n), None) => Ok(Some(SensorSpec::builtin(SensorName::parse(n)?)?)),
        (None, Some(f)) => Ok(Some(SensorSpec::from_json_file(f)?)),
        (None, None) => Ok(None),
        (Some(_), Some(_)) => Err(CliError::contract(
            "--sensor and --sensor-file are mutually exclusive",
        )),
    }
}

fn parse_window(window: &str) -> Result<(f64, f64), CliError> {
    let parts: Vec<&str> = window.split(',').collect();
    let bad = || CliError::contract(format!("--window expects \"LO,HI\" in nm, got {window:?}"));
    if parts.len() != 2 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    if !(lo < hi) {
        return Err(bad());
    }
    Ok((lo, hi))
}

pub struct RetrieveArgs {
    pub cube: PathBuf,
    pub lut: PathBuf,
    pub scene_params: PathBuf,
    pub sensor: Option<String>,
    pub sensor_file: Option<PathBuf>,
    pub mode: String,
    pub delta: f64,
    pub window: Option<String>,
    pub exclude_polygon: Option<PathBuf>,
    pub reestimate: bool,
    pub out: PathBuf,
}

pub fn retrieve(args: RetrieveArgs) -> Result<(), CliError> {
    let mut cube = RadianceCube::read_file(&args.cube)?;
    if let Some(spec) = resolve_sensor_flags(args.sensor.as_deref(), args.sensor_file.as_deref())? {
        // a sensor override must still describe the cube's band grid
        cube.sensor = spec;
        cube.validate()?;
    }
    let lut = RadianceLut::read_file(&args.lut)?;
    let scene_params: SceneParams = io::read_json(&args.scene_params)?;
    let window = args.window.as_deref().map(parse_window).transpose()?;
    let mode = match args.mode.as_str() {
        "global" => RetrievalMode::Global,
        "columnwise" => RetrievalMode::Columnwise,
        other => return Err(CliError::contract(format!("unknown mode {other:?}"))),
    };

    let exclusion: Option<HashSet<(usize, usize)>> = match &args.exclude_polygon {
        Some(path) => {
            let poly = PlumePolygon::from_json_file(path)?;
            let mask = rasterize_mask(&poly, cube.rows(), cube.cols(), 1.0)?;
            Some(mask.pixels.into_iter().collect())
        }
        None => None,
    };

    let fine = make_fine_slope(&lut, &scene_params)?;
    let options = RetrievalOptions {
        mode,
        delta: args.delta,
        exclusion,
        reestimate: args.reestimate,
        window_nm: window,
    };
    let map = matched_filter(&cube, TargetInput::Fine(&fine), &options)?;

    let mut provenance = Provenance::new()
        .with_input_file("cube", &args.cube)?
        .with_input_file("cube_data", &io::data_file_for(&args.cube))?
        .with_input_file("lut", &args.lut)?
        .with_input_file("lut_data", &io::data_file_for(&args.lut))?
        .with_input_file("scene_params", &args.scene_params)?
        .with_param("mode", serde_json::json!(args.mode))
        .with_param("delta", serde_json::json!(args.delta))
        .with_param("reestimate", serde_json::json!(args.reestimate));
    if let Some(path) = &args.exclude_polygon {
        provenance = provenance.with_input_file("exclude_polygon", path)?;
    }
    let meta = MapMetadata {
        mode,
        delta: args.delta,
        sensor: Some(cube.sensor.clone()),
        target_provenance: Some(TargetProvenance {
            lut_digest: io::digest_file(&args.lut)?,
            scene_params,
            window_nm: window.unwrap_or_else(|| cube.sensor.default_window_nm()),
        }),
        provenance,
    };
    map.write_file(&args.out, &meta)?;

    let noise_lo = map
        .noise_estimate
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let noise_hi = map
        .noise_estimate
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    println!(
        "wrote {} ({}×{} px, {} mode, noise estimate {:.3}..{:.3} ppm·m)",
        args.out.display(),
        map.rows(),
        map.cols(),
        args.mode,
        noise_lo,
        noise_hi
    );
    Ok(())
}

/// Flux report document written by `quantify`.
#[derive(Debug, Serialize, Deserialize)]
struct FluxReport {
    format: String,
    estimate: FluxEstimate,
    provenance: Provenance,
}

const FLUX_REPORT_FORMAT: &str = "plume-flux/1";

pub struct QuantifyArgs {
    pub map: PathBuf,
    pub polygon: PathBuf,
    pub wind: PathBuf,
    pub sensor: Option<String>,
    pub sensor_file: Option<PathBuf>,
    pub atmosphere: Option<PathBuf>,
    pub ueff: Option<f64>,
    pub clamp_negative: bool,
    pub out: PathBuf,
}

pub fn quantify(args: QuantifyArgs) -> Result<(), CliError> {
    let (map, meta) = plume_core::retrieval::EnhancementMap::read_file(&args.map)?;
    let sensor = match resolve_sensor_flags(args.sensor.as_deref(), args.sensor_file.as_deref())? {
        Some(spec) => spec,
        None => meta.sensor.clone().ok_or_else(|| {
            CliError::contract(
                "the map header carries no sensor spec; pass --sensor or --sensor-file",
            )
        })?,
    };
    let poly = PlumePolygon::from_json_file(&args.polygon)?;
    let wind = WindRecord::from_json_file(&args.wind)?;
    let atm = match &args.atmosphere {
        Some(path) => {
            let atm: AtmosphereParams = io::read_json(path)?;
            atm.validate()?;
            atm
        }
        None => AtmosphereParams::default(),
    };
    let config = QuantifyConfig {
        override_ueff: args.ueff,
        clamp_negative: args.clamp_negative,
        map_id: Some(io::digest_file(&args.map)?),
    };
    let estimate = quantify_plume(&map, &poly, &sensor, &wind, &atm, &config)?;

    let mut provenance = Provenance::new()
        .with_input_file("map", &args.map)?
        .with_input_file("map_data", &io::data_file_for(&args.map))?
        .with_input_file("polygon", &args.polygon)?
        .with_input_file("wind", &args.wind)?;
    if let Some(path) = &args.atmosphere {
        provenance = provenance.with_input_file("atmosphere", path)?;
    }
    if let Some(u) = args.ueff {
        provenance = provenance.with_param("ueff_override", serde_json::json!(u));
    }
    let report = FluxReport {
        format: FLUX_REPORT_FORMAT.to_string(),
        estimate,
        provenance,
    };
    io::write_json(&args.out, &report)?;
    println!(
        "Q = {:.4} kg/h (IME = {:.4} kg, L = {:.1} m, U_eff = {:.3} m/s, n_p = {})",
        report.estimate.q_kg_per_h,
        report.estimate.ime_kg,
        report.estimate.plume_length_m,
        report.estimate.u_eff_ms,
        report.estimate.inputs.n_pixels
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

pub fn simulate(
    scene_path: &Path,
    seed: Option<u64>,
    out_cube: &Path,
    out_truth: &Path,
) -> Result<(), CliError> {
    let mut scene = SimScene::from_json_file(scene_path)?;
    if let Some(seed) = seed {
        scene.seed = seed;
    }
    let (field, cube) = scene.render()?;

    let provenance = Provenance::new()
        .with_input_file("scene", scene_path)?
        .with_param("seed", serde_json::json!(scene.seed))
        .with_param("rng", serde_json::json!(rng::GENERATOR_ID));
    cube.write_file(out_cube, provenance.clone())?;
    field.write_file(out_truth, provenance)?;
    println!(
        "wrote {} and {} ({}×{} px, {} bands, seed {})",
        out_cube.display(),
        out_truth.display(),
        cube.rows(),
        cube.cols(),
        cube.bands(),
        scene.seed
    );
    Ok(())
}

pub fn compare(
    records_path: &Path,
    site: Option<&str>,
    dt_max: f64,
    out: &Path,
    table: bool,
) -> Result<(), CliError> {
    let records = cmp::read_records_jsonl(records_path)?;
    if records.is_empty() {
        return Err(CliError::contract("records file holds no records"));
    }
    let site = site.unwrap_or(&records[0].site).to_string();
    let provenance = Provenance::new()
        .with_input_file("records", records_path)?
        .with_param("dt_max_s", serde_json::json!(dt_max));
    let report = cmp::build_report(&site, &records, dt_max, provenance)?;
    cmp::write_report(out, &report)?;
    if table {
        print!("{}", cmp::render_table(&report));
    }
    let close = report.pairs.iter().filter(|p| p.within_dt_max).count();
    println!(
        "wrote {} ({} records, {} pairs within {} s)",
        out.display(),
        report.records.len(),
        close,
        dt_max
    );
    Ok(())
}

pub fn wind(
    u10: f64,
    direction: f64,
    source: &str,
    timestamp: &str,
    out: &Path,
) -> Result<(), CliError> {
    let timestamp = chrono::DateTime::parse_from_rfc3339(timestamp)
        .map_err(|e| CliError::contract(format!("bad --timestamp: {e}")))?
        .with_timezone(&chrono::Utc);
    let record = WindRecord {
        u10_ms: u10,
        direction_deg: direction,
        source: source.to_string(),
        timestamp,
    };
    record
        .validate()
        .map_err(|e| CliError::contract(e.to_string()))?;
    record.to_json_file(out)?;
    println!("wrote {}", out.display());
    Ok(())
}
