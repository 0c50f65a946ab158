//! Clutter-matched-filter retrieval of methane column enhancements.
//!
//! Each pixel's deviation from the background mean is whitened with the
//! inverse background covariance and projected onto the radiance-space
//! target:
//!
//! ```text
//! ΔX = (x - μ)ᵀ Σ⁻¹ t / (tᵀ Σ⁻¹ t)
//! ```
//!
//! Background statistics come from the scene itself, either globally or
//! per column (the column-wise mode that absorbs smile and striping
//! artifacts). The target `t` is the log-slope signature times the
//! background mean, which closes the units of the quotient: the log
//! slope is per ppm·m, `t` is radiance per ppm·m, and ΔX comes out in
//! ppm·m. Solves go through a symmetric positive-definite factorization
//! of Σ; the inverse is never formed.
//!
//! Covariance uses the 1/n normalization — the quotient is invariant to
//! any positive rescaling of Σ, so the choice only shows up in the
//! per-scope noise estimate `(tᵀ Σ⁻¹ t)^(-1/2)` — and is ridge-regularized
//! by `δ · trace(Σ)/bands` so short columns still factor.

use std::collections::HashSet;
use std::path::Path;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cube::{CubeError, RadianceCube};
use crate::io::{self, IoError, Provenance};
use crate::linalg::{dot, Cholesky};
use crate::lut::SceneParams;
use crate::sensor::SensorSpec;
use crate::target::{
    convolve_to_bands, ColumnPosition, FineSlope, TargetError, TargetSpectrum, MIN_TARGET_BANDS,
};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("{scope}: {selected} pixels selected for background statistics, need at least 2")]
    TooFewPixels { scope: String, selected: usize },
    #[error("degenerate background covariance ({scope}): not positive definite after δ = {delta} regularization")]
    DegenerateBackground { scope: String, delta: f64 },
    #[error("degenerate target ({scope}): {detail}")]
    DegenerateTarget { scope: String, detail: String },
    #[error("band grid mismatch: {0}")]
    BandMismatch(String),
    #[error(transparent)]
    Cube(#[from] CubeError),
    #[error(transparent)]
    Target(#[from] TargetError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// ppm·m → ppb conversion for an 8 km scale height with uniform vertical
/// methane distribution. Exactly representable in binary, so unit
/// round-trips are bit-identical.
pub const PPMM_TO_PPB: f64 = 0.125;

/// Default covariance ridge as a fraction of the mean diagonal energy.
pub const DEFAULT_DELTA: f64 = 1e-3;

/// First-pass quantile above which pixels are dropped from background
/// statistics when re-estimation is enabled.
pub const REESTIMATE_PERCENTILE: f64 = 0.995;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    Ppmm,
    Ppb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrievalMode {
    Global,
    Columnwise,
}

/// Statistics scope: the whole image or a single column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Global,
    Column(usize),
}

impl std::fmt::Display for Scope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scope::Global => write!(f, "global scope"),
            Scope::Column(c) => write!(f, "column {c}"),
        }
    }
}

/// Background Gaussian model for one scope.
#[derive(Debug, Clone)]
pub struct BackgroundStats {
    pub mean: Array1<f64>,
    pub covariance: Array2<f64>,
    pub sample_count: usize,
    /// Ridge fraction δ that was applied.
    pub regularization: f64,
}

/// Per-pixel methane column enhancement map.
#[derive(Debug, Clone)]
pub struct EnhancementMap {
    /// Indexed `(row, col)`.
    pub values: Array2<f64>,
    pub units: Units,
    /// Predicted retrieval standard deviation per column, same units as
    /// `values`. Global mode repeats one value.
    pub noise_estimate: Vec<f64>,
}

impl EnhancementMap {
    pub fn rows(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn cols(&self) -> usize {
        self.values.shape()[1]
    }
}

/// Target supplied to the filter: a fixed band-space spectrum, or the
/// fine-grid slope from which column-wise mode regenerates per-column
/// spectra when the sensor has a smile model.
#[derive(Debug, Clone, Copy)]
pub enum TargetInput<'a> {
    Band(&'a TargetSpectrum),
    Fine(&'a FineSlope),
}

#[derive(Debug, Clone)]
pub struct RetrievalOptions {
    pub mode: RetrievalMode,
    /// Covariance ridge fraction δ.
    pub delta: f64,
    /// Pixels excluded from background statistics (still retrieved).
    pub exclusion: Option<HashSet<(usize, usize)>>,
    /// One re-estimation pass excluding pixels above the 99.5th
    /// percentile of first-pass ΔX.
    pub reestimate: bool,
    /// Retrieval window for screening when the target is [`TargetInput::Fine`];
    /// defaults to the sensor's methane window.
    pub window_nm: Option<(f64, f64)>,
}

impl Default for RetrievalOptions {
    fn default() -> Self {
        Self {
            mode: RetrievalMode::Global,
            delta: DEFAULT_DELTA,
            exclusion: None,
            reestimate: false,
            window_nm: None,
        }
    }
}

/// Sample mean and 1/n covariance over the scope's pixels minus the
/// exclusion set, ridge-regularized and verified positive definite.
pub fn estimate_background(
    cube: &RadianceCube,
    scope: Scope,
    exclusion: Option<&HashSet<(usize, usize)>>,
    delta: f64,
) -> Result<BackgroundStats, RetrievalError> {
    let bands: Vec<usize> = (0..cube.bands()).collect();
    let pixels = scope_pixels(cube, scope, exclusion);
    let stats = compute_stats(cube, &bands, &pixels, delta, scope)?;
    if Cholesky::factor(&stats.covariance).is_none() {
        return Err(RetrievalError::DegenerateBackground {
            scope: scope.to_string(),
            delta,
        });
    }
    Ok(stats)
}

/// Radiance-space target `t = log_slope ⊙ μ`, radiance per ppm·m.
pub fn radiance_space_target(
    target: &TargetSpectrum,
    stats: &BackgroundStats,
) -> Result<Array1<f64>, RetrievalError> {
    if target.bands() != stats.mean.len() {
        return Err(RetrievalError::BandMismatch(format!(
            "target has {} bands, background statistics have {}",
            target.bands(),
            stats.mean.len()
        )));
    }
    let mut t = Array1::zeros(target.bands());
    for i in 0..target.bands() {
        t[i] = target.log_slope[i] * stats.mean[i];
    }
    Ok(t)
}

/// Run the matched filter over the cube. Output units are ppm·m.
pub fn matched_filter(
    cube: &RadianceCube,
    target: TargetInput<'_>,
    options: &RetrievalOptions,
) -> Result<EnhancementMap, RetrievalError> {
    cube.validate()?;
    let rows = cube.rows();
    let cols = cube.cols();

    match options.mode {
        RetrievalMode::Global => {
            let resolved = resolve_target(cube, target, options, None)?;
            let scope = Scope::Global;
            let (values, noise) = run_scope(cube, scope, &resolved, options)?;
            let mut out = Array2::zeros((rows, cols));
            for r in 0..rows {
                for c in 0..cols {
                    out[(r, c)] = values[r * cols + c];
                }
            }
            Ok(EnhancementMap {
                values: out,
                units: Units::Ppmm,
                noise_estimate: vec![noise; cols],
            })
        }
        RetrievalMode::Columnwise => {
            // Per-column target regeneration only matters when a fine
            // slope and a smile model are both present.
            let smile = cube.sensor.smile_shift_nm != 0.0;
            let shared = match (&target, smile) {
                (TargetInput::Fine(_), true) => None,
                _ => Some(resolve_target(cube, target, options, None)?),
            };
            let columns: Vec<Result<(Vec<f64>, f64), RetrievalError>> = (0..cols)
                .into_par_iter()
                .map(|col| {
                    let resolved = match &shared {
                        Some(r) => r.clone(),
                        None => resolve_target(
                            cube,
                            target,
                            options,
                            Some(ColumnPosition {
                                index: col,
                                n_cols: cols,
                            }),
                        )?,
                    };
                    run_scope(cube, Scope::Column(col), &resolved, options)
                })
                .collect();
            let mut out = Array2::zeros((rows, cols));
            let mut noise_estimate = Vec::with_capacity(cols);
            for (col, result) in columns.into_iter().enumerate() {
                let (values, noise) = result?;
                for r in 0..rows {
                    out[(r, col)] = values[r];
                }
                noise_estimate.push(noise);
            }
            Ok(EnhancementMap {
                values: out,
                units: Units::Ppmm,
                noise_estimate,
            })
        }
    }
}

/// Convert between ppm·m and ppb (×0.125 exactly). Idempotent when the
/// map already carries the requested units.
pub fn convert_units(map: &EnhancementMap, to: Units) -> EnhancementMap {
    if map.units == to {
        return map.clone();
    }
    let factor = match to {
        Units::Ppb => PPMM_TO_PPB,
        Units::Ppmm => 1.0 / PPMM_TO_PPB,
    };
    EnhancementMap {
        values: map.values.mapv(|v| v * factor),
        units: to,
        noise_estimate: map.noise_estimate.iter().map(|v| v * factor).collect(),
    }
}

/// Target matched against a specific cube's band set.
#[derive(Debug, Clone)]
struct ResolvedTarget {
    cube_bands: Vec<usize>,
    log_slope: Vec<f64>,
}

fn resolve_target(
    cube: &RadianceCube,
    target: TargetInput<'_>,
    options: &RetrievalOptions,
    column: Option<ColumnPosition>,
) -> Result<ResolvedTarget, RetrievalError> {
    let spectrum_owned;
    let spectrum: &TargetSpectrum = match target {
        TargetInput::Band(t) => t,
        TargetInput::Fine(fine) => {
            let window = options
                .window_nm
                .unwrap_or_else(|| cube.sensor.default_window_nm());
            spectrum_owned = convolve_to_bands(fine, &cube.sensor, column)?.screen(window);
            &spectrum_owned
        }
    };
    let mut cube_bands = Vec::new();
    let mut log_slope = Vec::new();
    for (i, center) in spectrum.band_centers_nm.iter().enumerate() {
        if let Some(idx) = cube.band_index_of(*center) {
            cube_bands.push(idx);
            log_slope.push(spectrum.log_slope[i]);
        }
    }
    if cube_bands.len() < MIN_TARGET_BANDS {
        let scope = column.map_or("global scope".to_string(), |c| format!("column {}", c.index));
        return Err(RetrievalError::DegenerateTarget {
            scope,
            detail: format!(
                "{} target bands matched the cube's band set, need at least {MIN_TARGET_BANDS}",
                cube_bands.len()
            ),
        });
    }
    Ok(ResolvedTarget {
        cube_bands,
        log_slope,
    })
}

fn scope_pixels(
    cube: &RadianceCube,
    scope: Scope,
    exclusion: Option<&HashSet<(usize, usize)>>,
) -> Vec<(usize, usize)> {
    let keep = |r: usize, c: usize| exclusion.is_none_or(|ex| !ex.contains(&(r, c)));
    match scope {
        Scope::Global => {
            let mut out = Vec::with_capacity(cube.rows() * cube.cols());
            for r in 0..cube.rows() {
                for c in 0..cube.cols() {
                    if keep(r, c) {
                        out.push((r, c));
                    }
                }
            }
            out
        }
        Scope::Column(col) => (0..cube.rows())
            .filter(|r| keep(*r, col))
            .map(|r| (r, col))
            .collect(),
    }
}

fn compute_stats(
    cube: &RadianceCube,
    bands: &[usize],
    pixels: &[(usize, usize)],
    delta: f64,
    scope: Scope,
) -> Result<BackgroundStats, RetrievalError> {
    let nb = bands.len();
    let n = pixels.len();
    if n < 2 {
        return Err(RetrievalError::TooFewPixels {
            scope: scope.to_string(),
            selected: n,
        });
    }
    let mut mean = Array1::<f64>::zeros(nb);
    for &(r, c) in pixels {
        for (k, &b) in bands.iter().enumerate() {
            mean[k] += cube.data[(b, r, c)];
        }
    }
    mean.mapv_inplace(|v| v / n as f64);

    let mut cov = Array2::<f64>::zeros((nb, nb));
    let mut dev = vec![0.0f64; nb];
    for &(r, c) in pixels {
        for (k, &b) in bands.iter().enumerate() {
            dev[k] = cube.data[(b, r, c)] - mean[k];
        }
        for i in 0..nb {
            let di = dev[i];
            for j in 0..=i {
                cov[(i, j)] += di * dev[j];
            }
        }
    }
    for i in 0..nb {
        for j in 0..=i {
            let v = cov[(i, j)] / n as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let trace: f64 = (0..nb).map(|i| cov[(i, i)]).sum();
    let ridge = delta * trace / nb as f64;
    for i in 0..nb {
        cov[(i, i)] += ridge;
    }
    Ok(BackgroundStats {
        mean,
        covariance: cov,
        sample_count: n,
        regularization: delta,
    })
}

/// Retrieve one scope: estimate statistics (optionally twice, with the
/// high-ΔX tail excluded on the second pass) and apply the filter to
/// every pixel of the scope. Returns values in scope pixel order
/// (row-major for global, row order for a column) and the scope's noise
/// estimate.
fn run_scope(
    cube: &RadianceCube,
    scope: Scope,
    target: &ResolvedTarget,
    options: &RetrievalOptions,
) -> Result<(Vec<f64>, f64), RetrievalError> {
    let pass = |exclusion: Option<&HashSet<(usize, usize)>>| -> Result<(Vec<f64>, f64), RetrievalError> {
        let stats_pixels = scope_pixels(cube, scope, exclusion);
        let stats = compute_stats(cube, &target.cube_bands, &stats_pixels, options.delta, scope)?;
        let chol = Cholesky::factor(&stats.covariance).ok_or_else(|| {
            RetrievalError::DegenerateBackground {
                scope: scope.to_string(),
                delta: options.delta,
            }
        })?;
        let nb = target.cube_bands.len();
        let mut t = Array1::zeros(nb);
        for k in 0..nb {
            t[k] = target.log_slope[k] * stats.mean[k];
        }
        if t.iter().all(|v| *v == 0.0) {
            return Err(RetrievalError::DegenerateTarget {
                scope: scope.to_string(),
                detail: "radiance-space target is the zero vector".to_string(),
            });
        }
        let y = chol.solve(&t);
        let denom = dot(&t, &y);
        if !(denom > 0.0) {
            return Err(RetrievalError::DegenerateTarget {
                scope: scope.to_string(),
                detail: format!("tᵀΣ⁻¹t = {denom} is not positive"),
            });
        }
        let values = apply_filter(cube, scope, &target.cube_bands, &stats.mean, &y, denom);
        Ok((values, 1.0 / denom.sqrt()))
    };

    let base_exclusion = options.exclusion.as_ref();
    let (values, noise) = pass(base_exclusion)?;
    if !options.reestimate {
        return Ok((values, noise));
    }

    // One re-estimation pass: drop the high tail of the first-pass
    // distribution from the statistics, then retrieve again.
    let mut sorted = values.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((sorted.len() - 1) as f64 * REESTIMATE_PERCENTILE).round() as usize;
    let threshold = sorted[idx];
    let mut excluded: HashSet<(usize, usize)> = base_exclusion.cloned().unwrap_or_default();
    let all_pixels = scope_pixels(cube, scope, None);
    for (pixel, value) in all_pixels.iter().zip(&values) {
        if *value > threshold {
            excluded.insert(*pixel);
        }
    }
    pass(Some(&excluded))
}

/// Apply `ΔX = (x - μ)ᵀ y / denom` to every pixel of the scope, sweeping
/// band-major for locality. The per-pixel accumulation order is fixed
/// (ascending band), so results are identical at any worker count.
fn apply_filter(
    cube: &RadianceCube,
    scope: Scope,
    bands: &[usize],
    mean: &Array1<f64>,
    y: &Array1<f64>,
    denom: f64,
) -> Vec<f64> {
    match scope {
        Scope::Global => {
            let rows = cube.rows();
            let cols = cube.cols();
            let mut out: Vec<Vec<f64>> = (0..rows)
                .into_par_iter()
                .map(|r| {
                    let mut acc = vec![0.0f64; cols];
                    for (k, &b) in bands.iter().enumerate() {
                        let weight = y[k];
                        let mu = mean[k];
                        for (c, slot) in acc.iter_mut().enumerate() {
                            *slot += weight * (cube.data[(b, r, c)] - mu);
                        }
                    }
                    for slot in &mut acc {
                        *slot /= denom;
                    }
                    acc
                })
                .collect();
            let mut flat = Vec::with_capacity(rows * cols);
            for row in out.drain(..) {
                flat.extend(row);
            }
            flat
        }
        Scope::Column(col) => {
            let rows = cube.rows();
            let mut acc = vec![0.0f64; rows];
            for (k, &b) in bands.iter().enumerate() {
                let weight = y[k];
                let mu = mean[k];
                for (r, slot) in acc.iter_mut().enumerate() {
                    *slot += weight * (cube.data[(b, r, col)] - mu);
                }
            }
            for slot in &mut acc {
                *slot /= denom;
            }
            acc
        }
    }
}

pub const MAP_FORMAT: &str = "plume-map/1";

/// Provenance of the target spectrum used for a retrieval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetProvenance {
    pub lut_digest: String,
    pub scene_params: SceneParams,
    pub window_nm: (f64, f64),
}

/// Header metadata stored alongside an enhancement map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapMetadata {
    pub mode: RetrievalMode,
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensor: Option<SensorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_provenance: Option<TargetProvenance>,
    pub provenance: Provenance,
}

#[derive(Debug, Serialize, Deserialize)]
struct MapHeader {
    format: String,
    rows: usize,
    cols: usize,
    units: Units,
    noise_estimate: Vec<f64>,
    mode: RetrievalMode,
    delta: f64,
    dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sensor: Option<SensorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target_provenance: Option<TargetProvenance>,
    provenance: Provenance,
    data_file: String,
}

impl EnhancementMap {
    pub fn write_file(&self, path: &Path, meta: &MapMetadata) -> Result<(), IoError> {
        let data_path = io::data_file_for(path);
        let header = MapHeader {
            format: MAP_FORMAT.to_string(),
            rows: self.rows(),
            cols: self.cols(),
            units: self.units,
            noise_estimate: self.noise_estimate.clone(),
            mode: meta.mode,
            delta: meta.delta,
            dtype: "float32-le".to_string(),
            sensor: meta.sensor.clone(),
            target_provenance: meta.target_provenance.clone(),
            provenance: meta.provenance.clone(),
            data_file: data_path
                .file_name()
                .unwrap()
                .to_string_lossy()
                .into_owned(),
        };
        io::write_json(path, &header)?;
        io::write_f32_payload(&data_path, self.values.as_slice().unwrap())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<(Self, MapMetadata), RetrievalError> {
        let header: MapHeader = io::read_json(path)?;
        if header.format != MAP_FORMAT {
            return Err(RetrievalError::Io(IoError::format(
                path,
                format!("unsupported format {:?}", header.format),
            )));
        }
        let data_path = path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&header.data_file);
        let values = io::read_f32_payload(&data_path, header.rows * header.cols)?;
        let values = Array2::from_shape_vec((header.rows, header.cols), values)
            .map_err(|e| RetrievalError::Io(IoError::format(path, e.to_string())))?;
        Ok((
            EnhancementMap {
                values,
                units: header.units,
                noise_estimate: header.noise_estimate,
            },
            MapMetadata {
                mode: header.mode,
                delta: header.delta,
                sensor: header.sensor,
                target_provenance: header.target_provenance,
                provenance: header.provenance,
            },
        ))
    }
}
