//! Synthetic hyperspectral scenes with known methane plumes.
//!
//! The simulator renders radiance cubes from a ground-truth enhancement
//! field through the same forward relation the retrieval inverts:
//!
//! ```text
//! L(b) = B(b) · exp(log_slope(b) · ΔX) · g(col) + n
//! ```
//!
//! with `B` the per-pixel background draw (multivariate Gaussian around a
//! mean spectrum, or a convex mixture of endmember spectra with smoothly
//! varying weights), `g` a per-column striping gain of mean 1, and `n`
//! additive band noise of standard deviation `reference_radiance / snr`.
//! When smile is enabled both the background spectra and the slope are
//! sampled at the column-shifted band centers, which is what makes the
//! artifact visible to a global-statistics retrieval and absorbed by the
//! column-wise one.
//!
//! All randomness is counter-based (see [`crate::rng`]): a draw depends
//! only on `(seed, stream, row, col, band)`, so rendering is bit-identical
//! at any worker count.

use std::path::Path;

use ndarray::{Array2, Array3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cube::RadianceCube;
use crate::io::{self, IoError, Provenance};
use crate::linalg::Cholesky;
use crate::quantify::{self, AtmosphereParams, PlumeMask, QuantifyError, WindRecord};
use crate::retrieval::{
    convert_units, matched_filter, RetrievalError, RetrievalMode, RetrievalOptions, TargetInput,
    Units,
};
use crate::rng::CounterRng;
use crate::sensor::{SensorName, SensorSpec};
use crate::target::{FineSlope, TargetError, TargetSpectrum};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid sim config: {0}")]
    InvalidConfig(String),
    #[error("invalid plume field: {0}")]
    InvalidField(String),
    #[error(transparent)]
    Target(#[from] TargetError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Quantify(#[from] QuantifyError),
    #[error(transparent)]
    Io(#[from] IoError),
}

const STREAM_BACKGROUND: u64 = 0;
const STREAM_STRIPING: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_TEXTURE: u64 = 3;

/// Sinusoidal components per texture weight field.
const TEXTURE_COMPONENTS: usize = 4;

/// Ground-truth per-pixel enhancement, ppm·m.
#[derive(Debug, Clone, PartialEq)]
pub struct PlumeField {
    pub values: Array2<f64>,
    /// Generator parameters, for provenance.
    pub generator: serde_json::Value,
}

pub const FIELD_FORMAT: &str = "plume-field/1";

impl PlumeField {
    pub fn rows(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn cols(&self) -> usize {
        self.values.shape()[1]
    }

    /// Exact discrete sum of the field, ppm·m · pixels.
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(SimError::InvalidField(
                "enhancement values must be finite and >= 0".to_string(),
            ));
        }
        Ok(())
    }

    pub fn write_file(&self, path: &Path, provenance: Provenance) -> Result<(), IoError> {
        let data_path = io::data_file_for(path);
        let header = FieldHeader {
            format: FIELD_FORMAT.to_string(),
            rows: self.rows(),
            cols: self.cols(),
            units: "ppmm".to_string(),
            dtype: "float32-le".to_string(),
            generator: self.generator.clone(),
            provenance,
            data_file: data_path
                .file_name()
                .unwrap()
                .to_string_lossy()
                .into_owned(),
        };
        io::write_json(path, &header)?;
        io::write_f32_payload(&data_path, self.values.as_slice().unwrap())
    }

    pub fn read_file(path: &Path) -> Result<Self, SimError> {
        let header: FieldHeader = io::read_json(path)?;
        if header.format != FIELD_FORMAT {
            return Err(SimError::Io(IoError::format(
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
            .map_err(|e| SimError::Io(IoError::format(path, e.to_string())))?;
        let field = Self {
            values,
            generator: header.generator,
        };
        field.validate()?;
        Ok(field)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FieldHeader {
    format: String,
    rows: usize,
    cols: usize,
    units: String,
    dtype: String,
    generator: serde_json::Value,
    provenance: Provenance,
    data_file: String,
}

/// Continuum approximation to a Gaussian blob's discrete total.
pub fn gaussian_blob_analytic_total(sigma_row: f64, sigma_col: f64, peak_ppmm: f64) -> f64 {
    peak_ppmm * std::f64::consts::TAU * sigma_row * sigma_col
}

/// Anisotropic Gaussian blob
/// `peak · exp(-((r-r₀)²/2σ_r² + (c-c₀)²/2σ_c²))`.
pub fn gaussian_blob_field(
    dims: (usize, usize),
    center: (f64, f64),
    sigmas: (f64, f64),
    peak_ppmm: f64,
) -> Result<PlumeField, SimError> {
    let (rows, cols) = dims;
    if rows == 0 || cols == 0 {
        return Err(SimError::InvalidField("empty dimensions".to_string()));
    }
    if !(sigmas.0 > 0.0) || !(sigmas.1 > 0.0) {
        return Err(SimError::InvalidField(format!(
            "sigmas must be > 0, got {sigmas:?}"
        )));
    }
    if !(peak_ppmm >= 0.0) {
        return Err(SimError::InvalidField(format!(
            "peak must be >= 0, got {peak_ppmm}"
        )));
    }
    let mut values = Array2::zeros((rows, cols));
    for r in 0..rows {
        let dr = (r as f64 - center.0) / sigmas.0;
        for c in 0..cols {
            let dc = (c as f64 - center.1) / sigmas.1;
            values[(r, c)] = peak_ppmm * (-0.5 * (dr * dr + dc * dc)).exp();
        }
    }
    let field = PlumeField {
        generator: serde_json::json!({
            "type": "gaussian_blob",
            "center_row": center.0,
            "center_col": center.1,
            "sigma_row": sigmas.0,
            "sigma_col": sigmas.1,
            "peak_ppmm": peak_ppmm,
            "analytic_total": gaussian_blob_analytic_total(sigmas.0, sigmas.1, peak_ppmm),
            "discrete_total": values.iter().sum::<f64>(),
        }),
        values,
    };
    field.validate()?;
    Ok(field)
}

/// Rectangle of uniform enhancement; handy for per-pixel oracle checks.
pub fn uniform_rect_field(
    dims: (usize, usize),
    origin: (usize, usize),
    size: (usize, usize),
    value_ppmm: f64,
) -> Result<PlumeField, SimError> {
    let (rows, cols) = dims;
    if !(value_ppmm >= 0.0) {
        return Err(SimError::InvalidField(format!(
            "value must be >= 0, got {value_ppmm}"
        )));
    }
    let mut values = Array2::zeros((rows, cols));
    for r in origin.0..(origin.0 + size.0).min(rows) {
        for c in origin.1..(origin.1 + size.1).min(cols) {
            values[(r, c)] = value_ppmm;
        }
    }
    Ok(PlumeField {
        generator: serde_json::json!({
            "type": "uniform_rect",
            "row0": origin.0,
            "col0": origin.1,
            "height": size.0,
            "width": size.1,
            "value_ppmm": value_ppmm,
        }),
        values,
    })
}

/// Background clutter model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum BackgroundModel {
    /// Mean spectrum plus an optional band×band covariance draw.
    Gaussian {
        mean: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        covariance: Option<Vec<Vec<f64>>>,
    },
    /// Convex mixture of endmember spectra with spatially smooth random
    /// weights, giving the covariance a non-diagonal low-rank structure.
    Textured {
        endmembers: Vec<Vec<f64>>,
        /// Correlation length of the weight fields, pixels.
        length_scale_px: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub sensor: SensorSpec,
    pub background: BackgroundModel,
    /// SNR at the reference radiance; `None` disables sensor noise.
    #[serde(default)]
    pub snr: Option<f64>,
    #[serde(default = "default_reference_radiance")]
    pub reference_radiance: f64,
    #[serde(default)]
    pub smile: bool,
    /// Std of the per-column gain, as a fraction of 1.
    #[serde(default)]
    pub striping_std_frac: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_reference_radiance() -> f64 {
    1.0
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.sensor
            .validate()
            .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        let bands = self.sensor.bands();
        if let Some(snr) = self.snr {
            if !(snr > 0.0) {
                return Err(SimError::InvalidConfig(format!(
                    "snr must be > 0, got {snr}"
                )));
            }
        }
        if !(self.reference_radiance > 0.0) {
            return Err(SimError::InvalidConfig(format!(
                "reference_radiance must be > 0, got {}",
                self.reference_radiance
            )));
        }
        if !(self.striping_std_frac >= 0.0) {
            return Err(SimError::InvalidConfig(format!(
                "striping_std_frac must be >= 0, got {}",
                self.striping_std_frac
            )));
        }
        match &self.background {
            BackgroundModel::Gaussian { mean, covariance } => {
                if mean.len() != bands {
                    return Err(SimError::InvalidConfig(format!(
                        "background mean has {} entries for {} bands",
                        mean.len(),
                        bands
                    )));
                }
                if let Some(cov) = covariance {
                    if cov.len() != bands || cov.iter().any(|row| row.len() != bands) {
                        return Err(SimError::InvalidConfig(format!(
                            "covariance must be {bands}×{bands}"
                        )));
                    }
                }
            }
            BackgroundModel::Textured {
                endmembers,
                length_scale_px,
            } => {
                if endmembers.len() < 2 {
                    return Err(SimError::InvalidConfig(
                        "textured background needs at least 2 endmembers".to_string(),
                    ));
                }
                if endmembers.iter().any(|e| e.len() != bands) {
                    return Err(SimError::InvalidConfig(format!(
                        "every endmember must have {bands} entries"
                    )));
                }
                if !(length_scale_px > &0.0) {
                    return Err(SimError::InvalidConfig(format!(
                        "length_scale_px must be > 0, got {length_scale_px}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Methane signature used by the forward model: per-band values, or a
/// fine grid that is SRF-convolved (and shifted under smile) per column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SlopeModel {
    Band {
        log_slope: Vec<f64>,
    },
    Fine {
        wavelengths_nm: Vec<f64>,
        log_slope: Vec<f64>,
    },
}

impl SlopeModel {
    /// Band-space target spectrum for retrieving scenes rendered with
    /// this slope (fit statistics are exact by construction).
    pub fn to_target(&self, spec: &SensorSpec) -> Result<TargetSpectrum, SimError> {
        match self {
            SlopeModel::Band { log_slope } => {
                if log_slope.len() != spec.bands() {
                    return Err(SimError::InvalidConfig(format!(
                        "slope has {} entries for {} bands",
                        log_slope.len(),
                        spec.bands()
                    )));
                }
                Ok(TargetSpectrum {
                    band_centers_nm: spec.band_centers_nm.clone(),
                    log_slope: log_slope.clone(),
                    fit_r2: vec![1.0; spec.bands()],
                    window_nm: (
                        spec.band_centers_nm[0],
                        *spec.band_centers_nm.last().unwrap(),
                    ),
                })
            }
            SlopeModel::Fine { .. } => {
                let fine = self.to_fine_slope()?;
                Ok(crate::target::convolve_to_bands(&fine, spec, None)?)
            }
        }
    }

    pub fn to_fine_slope(&self) -> Result<FineSlope, SimError> {
        match self {
            SlopeModel::Band { .. } => Err(SimError::InvalidConfig(
                "band slope model has no fine grid".to_string(),
            )),
            SlopeModel::Fine {
                wavelengths_nm,
                log_slope,
            } => {
                if wavelengths_nm.len() != log_slope.len() {
                    return Err(SimError::InvalidConfig(format!(
                        "{} wavelengths but {} slopes",
                        wavelengths_nm.len(),
                        log_slope.len()
                    )));
                }
                Ok(FineSlope {
                    wavelengths_nm: wavelengths_nm.clone(),
                    log_slope: log_slope.clone(),
                    fit_r2: vec![1.0; wavelengths_nm.len()],
                    valid: vec![true; wavelengths_nm.len()],
                })
            }
        }
    }
}

/// Linear interpolation clamped at the curve's ends.
fn interp_clamped(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    let last = xs.len() - 1;
    if x >= xs[last] {
        return ys[last];
    }
    let j = xs.partition_point(|v| *v < x);
    let t = (x - xs[j - 1]) / (xs[j] - xs[j - 1]);
    ys[j - 1] + t * (ys[j] - ys[j - 1])
}

/// Spectrum sampled at the column's (possibly smile-shifted) band centers.
fn sample_spectrum_at_shift(spec: &SensorSpec, curve: &[f64], shift_nm: f64) -> Vec<f64> {
    if shift_nm == 0.0 {
        return curve.to_vec();
    }
    spec.band_centers_nm
        .iter()
        .map(|c| interp_clamped(&spec.band_centers_nm, curve, c + shift_nm))
        .collect()
}

struct ColumnSetup {
    /// Per-band slope for this column.
    slope: Vec<f64>,
    /// Background mean (Gaussian) or endmembers (Textured), shifted.
    mean: Vec<f64>,
    endmembers: Vec<Vec<f64>>,
    gain: f64,
}

struct TextureParams {
    /// Per endmember, per component: (row freq, col freq, phase).
    components: Vec<[(f64, f64, f64); TEXTURE_COMPONENTS]>,
}

impl TextureParams {
    fn draw(rng: &CounterRng, n_endmembers: usize, length_scale: f64) -> Self {
        let mut components = Vec::with_capacity(n_endmembers);
        for k in 0..n_endmembers {
            let mut parts = [(0.0, 0.0, 0.0); TEXTURE_COMPONENTS];
            for (j, part) in parts.iter_mut().enumerate() {
                let base = ((k * TEXTURE_COMPONENTS + j) * 3) as u64;
                let freq = (0.25 + 0.75 * rng.uniform(base)) / length_scale;
                let angle = std::f64::consts::TAU * rng.uniform(base + 1);
                let phase = std::f64::consts::TAU * rng.uniform(base + 2);
                *part = (freq * angle.cos(), freq * angle.sin(), phase);
            }
            components.push(parts);
        }
        Self { components }
    }

    /// Convex mixture weights at a pixel (softmax of smooth fields).
    fn weights(&self, row: usize, col: usize, out: &mut Vec<f64>) {
        out.clear();
        let mut max = f64::NEG_INFINITY;
        for parts in &self.components {
            let mut s = 0.0;
            for (fr, fc, phase) in parts {
                s += (std::f64::consts::TAU * (fr * row as f64 + fc * col as f64) + phase).cos();
            }
            out.push(s);
            max = max.max(s);
        }
        let mut norm = 0.0;
        for w in out.iter_mut() {
            *w = (*w - max).exp();
            norm += *w;
        }
        for w in out.iter_mut() {
            *w /= norm;
        }
    }
}

/// Render a radiance cube from a truth field. Deterministic given the
/// config seed; parallel across rows with counter-indexed random streams.
pub fn render_cube(
    field: &PlumeField,
    slope: &SlopeModel,
    config: &SimConfig,
) -> Result<RadianceCube, SimError> {
    config.validate()?;
    field.validate()?;
    let spec = &config.sensor;
    let bands = spec.bands();
    let rows = field.rows();
    let cols = field.cols();
    if rows == 0 || cols == 0 {
        return Err(SimError::InvalidField("empty field".to_string()));
    }

    // Per-band slope at nominal centers (validates length / coverage).
    let nominal_slope: Vec<f64> = match slope {
        SlopeModel::Band { log_slope } => {
            if log_slope.len() != bands {
                return Err(SimError::InvalidConfig(format!(
                    "slope has {} entries for {} bands",
                    log_slope.len(),
                    bands
                )));
            }
            log_slope.clone()
        }
        SlopeModel::Fine { .. } => slope.to_target(spec)?.log_slope,
    };

    let cov_factor = match &config.background {
        BackgroundModel::Gaussian {
            covariance: Some(cov),
            ..
        } => {
            let mut a = Array2::zeros((bands, bands));
            for i in 0..bands {
                for j in 0..bands {
                    a[(i, j)] = cov[i][j];
                }
            }
            Some(Cholesky::factor_semidefinite(&a).ok_or_else(|| {
                SimError::InvalidConfig(
                    "background covariance is not positive semidefinite".to_string(),
                )
            })?)
        }
        _ => None,
    };

    let bg_rng = CounterRng::new(config.seed, STREAM_BACKGROUND);
    let stripe_rng = CounterRng::new(config.seed, STREAM_STRIPING);
    let noise_rng = CounterRng::new(config.seed, STREAM_NOISE);
    let texture_rng = CounterRng::new(config.seed, STREAM_TEXTURE);

    let texture = match &config.background {
        BackgroundModel::Textured {
            endmembers,
            length_scale_px,
        } => Some(TextureParams::draw(
            &texture_rng,
            endmembers.len(),
            *length_scale_px,
        )),
        _ => None,
    };

    // Everything that varies only with the column.
    let columns: Vec<ColumnSetup> = (0..cols)
        .map(|col| {
            let shift = if config.smile {
                spec.smile_shift_at(col, cols)
            } else {
                0.0
            };
            let col_slope = match (slope, shift != 0.0) {
                (SlopeModel::Fine { .. }, true) => {
                    let fine = slope.to_fine_slope()?;
                    let t = crate::target::convolve_to_bands(
                        &fine,
                        spec,
                        Some(crate::target::ColumnPosition {
                            index: col,
                            n_cols: cols,
                        }),
                    )?;
                    t.log_slope
                }
                (SlopeModel::Band { .. }, true) => {
                    sample_spectrum_at_shift(spec, &nominal_slope, shift)
                }
                _ => nominal_slope.clone(),
            };
            let (mean, endmembers) = match &config.background {
                BackgroundModel::Gaussian { mean, .. } => {
                    (sample_spectrum_at_shift(spec, mean, shift), Vec::new())
                }
                BackgroundModel::Textured { endmembers, .. } => (
                    Vec::new(),
                    endmembers
                        .iter()
                        .map(|e| sample_spectrum_at_shift(spec, e, shift))
                        .collect(),
                ),
            };
            let gain = if config.striping_std_frac > 0.0 {
                1.0 + config.striping_std_frac * stripe_rng.standard_normal(col as u64)
            } else {
                1.0
            };
            Ok(ColumnSetup {
                slope: col_slope,
                mean,
                endmembers,
                gain,
            })
        })
        .collect::<Result<_, SimError>>()?;

    let noise_std = config.snr.map(|snr| config.reference_radiance / snr);

    // Render rows in parallel; every random draw is addressed by
    // (row, col, band), so the split cannot change the output.
    let row_results: Vec<Vec<f64>> = (0..rows)
        .into_par_iter()
        .map(|r| {
            let mut out = vec![0.0f64; bands * cols];
            let mut z = vec![0.0f64; bands];
            let mut weights: Vec<f64> = Vec::new();
            for c in 0..cols {
                let setup = &columns[c];
                let pixel_base = ((r * cols + c) * bands) as u64;
                let dx = field.values[(r, c)];

                // background draw
                let correlated = cov_factor.as_ref().map(|factor| {
                    for (b, slot) in z.iter_mut().enumerate() {
                        *slot = bg_rng.standard_normal(pixel_base + b as u64);
                    }
                    factor.mul_lower(&ndarray::Array1::from_vec(z.clone()))
                });
                if let Some(texture) = &texture {
                    texture.weights(r, c, &mut weights);
                }

                for b in 0..bands {
                    let background = if let Some(texture_weights) = texture.as_ref().map(|_| &weights) {
                        let mut acc = 0.0;
                        for (k, w) in texture_weights.iter().enumerate() {
                            acc += w * setup.endmembers[k][b];
                        }
                        acc
                    } else {
                        let mut value = setup.mean[b];
                        if let Some(corr) = &correlated {
                            value += corr[b];
                        }
                        value
                    };
                    let mut value = background * (setup.slope[b] * dx).exp() * setup.gain;
                    if let Some(std) = noise_std {
                        value += std * noise_rng.standard_normal(pixel_base + b as u64);
                    }
                    out[b * cols + c] = value;
                }
            }
            out
        })
        .collect();

    let mut data = Array3::zeros((bands, rows, cols));
    for (r, row_data) in row_results.iter().enumerate() {
        for b in 0..bands {
            for c in 0..cols {
                data[(b, r, c)] = row_data[b * cols + c];
            }
        }
    }

    Ok(RadianceCube {
        sensor: spec.clone(),
        wavelengths_nm: spec.band_centers_nm.clone(),
        fwhm_nm: spec.fwhm_nm.clone(),
        data,
    })
}

/// Fraction of the field peak above which a pixel belongs to the truth
/// mask in round-trip checks.
pub const TRUTH_MASK_FRACTION: f64 = 0.01;

/// Pixels where the field exceeds `fraction` of its maximum.
pub fn truth_mask(field: &PlumeField, fraction: f64) -> Vec<(usize, usize)> {
    let peak = field.values.iter().cloned().fold(0.0f64, f64::max);
    let threshold = fraction * peak;
    let mut pixels = Vec::new();
    if peak <= 0.0 {
        return pixels;
    }
    for r in 0..field.rows() {
        for c in 0..field.cols() {
            if field.values[(r, c)] > threshold {
                pixels.push((r, c));
            }
        }
    }
    pixels
}

#[derive(Debug, Clone)]
pub struct RoundTripSettings {
    pub mode: RetrievalMode,
    pub delta: f64,
    pub u10_ms: f64,
    pub override_ueff: Option<f64>,
    /// Exclude the truth footprint from background statistics.
    pub exclude_truth_from_stats: bool,
}

impl Default for RoundTripSettings {
    fn default() -> Self {
        Self {
            mode: RetrievalMode::Global,
            delta: crate::retrieval::DEFAULT_DELTA,
            u10_ms: 3.0,
            override_ueff: None,
            exclude_truth_from_stats: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundTripReport {
    pub true_ime_kg: f64,
    pub retrieved_ime_kg: f64,
    pub ime_rel_err: f64,
    pub true_q_kg_per_h: f64,
    pub retrieved_q_kg_per_h: f64,
    pub q_rel_err: f64,
    pub mask_pixels: usize,
    /// Std of retrieved enhancement over pixels outside the truth mask, ppb.
    pub background_dx_std_ppb: f64,
}

/// Render → retrieve → quantify against the truth footprint.
///
/// The true IME is `k · 0.125 · Σ field` (the 0.125 converts the ppm·m
/// ground truth to ppb); the retrieved IME masks the retrieved map with
/// the pixels where the field exceeds 1% of its peak.
pub fn round_trip(
    field: &PlumeField,
    slope: &SlopeModel,
    config: &SimConfig,
    settings: &RoundTripSettings,
) -> Result<RoundTripReport, SimError> {
    let mask_pixels = truth_mask(field, TRUTH_MASK_FRACTION);
    if mask_pixels.is_empty() {
        return Err(SimError::InvalidField(
            "field has no pixels above the truth-mask threshold".to_string(),
        ));
    }
    let cube = render_cube(field, slope, config)?;

    let options = RetrievalOptions {
        mode: settings.mode,
        delta: settings.delta,
        exclusion: settings
            .exclude_truth_from_stats
            .then(|| mask_pixels.iter().cloned().collect()),
        reestimate: false,
        window_nm: None,
    };
    let band_target;
    let fine;
    let target = match slope {
        SlopeModel::Band { .. } => {
            band_target = slope.to_target(&config.sensor)?;
            TargetInput::Band(&band_target)
        }
        SlopeModel::Fine { .. } => {
            fine = slope.to_fine_slope()?;
            TargetInput::Fine(&fine)
        }
    };
    let map = matched_filter(&cube, target, &options)?;
    let map_ppb = convert_units(&map, Units::Ppb);

    let atm = AtmosphereParams::default();
    let pixel_area = config.sensor.pixel_area_m2();
    let k = quantify::scaling_factor(&atm, pixel_area);
    let mask = PlumeMask {
        pixels: mask_pixels,
        pixel_area_m2: pixel_area,
    };
    let retrieved_ime = quantify::ime(&map_ppb, &mask, k)?;
    let true_ime = k * crate::retrieval::PPMM_TO_PPB * field.total();
    let length = quantify::plume_length(&mask)?;
    let wind = WindRecord {
        u10_ms: settings.u10_ms,
        direction_deg: 0.0,
        source: "round-trip".to_string(),
        timestamp: chrono::DateTime::UNIX_EPOCH,
    };
    let u_eff = quantify::effective_wind(&config.sensor, &wind, settings.override_ueff)?;
    let true_q = quantify::flux(true_ime, u_eff, length)?;
    let retrieved_q = quantify::flux(retrieved_ime, u_eff, length)?;

    let mut bg = Vec::new();
    let in_mask: std::collections::HashSet<(usize, usize)> =
        mask.pixels.iter().cloned().collect();
    for r in 0..map_ppb.rows() {
        for c in 0..map_ppb.cols() {
            if !in_mask.contains(&(r, c)) {
                bg.push(map_ppb.values[(r, c)]);
            }
        }
    }
    let bg_std = std_dev(&bg);

    Ok(RoundTripReport {
        true_ime_kg: true_ime,
        retrieved_ime_kg: retrieved_ime,
        ime_rel_err: (retrieved_ime - true_ime) / true_ime,
        true_q_kg_per_h: true_q,
        retrieved_q_kg_per_h: retrieved_q,
        q_rel_err: (retrieved_q - true_q) / true_q,
        mask_pixels: mask.n_pixels(),
        background_dx_std_ppb: bg_std,
    })
}

fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var.sqrt()
}

/// Sensor reference in a scene file: a built-in name or an inline spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SensorRef {
    Name(String),
    Spec(SensorSpec),
}

impl SensorRef {
    pub fn resolve(&self) -> Result<SensorSpec, SimError> {
        match self {
            SensorRef::Name(name) => {
                let name = SensorName::parse(name)
                    .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
                SensorSpec::builtin(name).map_err(|e| SimError::InvalidConfig(e.to_string()))
            }
            SensorRef::Spec(spec) => {
                spec.validate()
                    .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
                Ok(spec.clone())
            }
        }
    }
}

/// Plume generator selection in a scene file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PlumeSpec {
    GaussianBlob {
        center_row: f64,
        center_col: f64,
        sigma_row: f64,
        sigma_col: f64,
        peak_ppmm: f64,
    },
    UniformRect {
        row0: usize,
        col0: usize,
        height: usize,
        width: usize,
        value_ppmm: f64,
    },
    Zero,
}

/// Complete scene description, the JSON format consumed by the CLI's
/// `simulate` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScene {
    pub rows: usize,
    pub cols: usize,
    pub sensor: SensorRef,
    pub background: BackgroundModel,
    #[serde(default)]
    pub snr: Option<f64>,
    #[serde(default = "default_reference_radiance")]
    pub reference_radiance: f64,
    #[serde(default)]
    pub smile: bool,
    #[serde(default)]
    pub striping_std_frac: f64,
    #[serde(default)]
    pub seed: u64,
    pub plume: PlumeSpec,
    pub slope: SlopeModel,
}

impl SimScene {
    pub fn from_json_file(path: &Path) -> Result<Self, SimError> {
        Ok(io::read_json(path)?)
    }

    pub fn config(&self) -> Result<SimConfig, SimError> {
        let config = SimConfig {
            sensor: self.sensor.resolve()?,
            background: self.background.clone(),
            snr: self.snr,
            reference_radiance: self.reference_radiance,
            smile: self.smile,
            striping_std_frac: self.striping_std_frac,
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn field(&self) -> Result<PlumeField, SimError> {
        let dims = (self.rows, self.cols);
        match &self.plume {
            PlumeSpec::GaussianBlob {
                center_row,
                center_col,
                sigma_row,
                sigma_col,
                peak_ppmm,
            } => gaussian_blob_field(
                dims,
                (*center_row, *center_col),
                (*sigma_row, *sigma_col),
                *peak_ppmm,
            ),
            PlumeSpec::UniformRect {
                row0,
                col0,
                height,
                width,
                value_ppmm,
            } => uniform_rect_field(dims, (*row0, *col0), (*height, *width), *value_ppmm),
            PlumeSpec::Zero => Ok(PlumeField {
                values: Array2::zeros(dims),
                generator: serde_json::json!({"type": "zero"}),
            }),
        }
    }

    pub fn render(&self) -> Result<(PlumeField, RadianceCube), SimError> {
        let field = self.field()?;
        let cube = render_cube(&field, &self.slope, &self.config()?)?;
        Ok((field, cube))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn toy_sensor(bands: usize) -> SensorSpec {
        SensorSpec {
            name: SensorName::Custom,
            gsd_m: 30.0,
            band_centers_nm: (0..bands).map(|i| 2100.0 + 10.0 * i as f64).collect(),
            fwhm_nm: vec![10.0; bands],
            snr_reference: 100.0,
            smile_shift_nm: 0.0,
            ueff_coeffs: Some(crate::sensor::UeffCoeffs {
                slope: 0.37,
                intercept: 0.70,
            }),
        }
    }

    fn flat_background(bands: usize, level: f64, var: f64) -> BackgroundModel {
        let mut cov = vec![vec![0.0; bands]; bands];
        for (i, row) in cov.iter_mut().enumerate() {
            row[i] = var;
        }
        BackgroundModel::Gaussian {
            mean: vec![level; bands],
            covariance: if var > 0.0 { Some(cov) } else { None },
        }
    }

    fn noiseless_config(bands: usize, seed: u64, var: f64) -> SimConfig {
        SimConfig {
            sensor: toy_sensor(bands),
            background: flat_background(bands, 1.0, var),
            snr: None,
            reference_radiance: 1.0,
            smile: false,
            striping_std_frac: 0.0,
            seed,
        }
    }

    #[test]
    fn blob_with_zero_peak_is_all_zero() {
        let field = gaussian_blob_field((20, 20), (10.0, 10.0), (3.0, 3.0), 0.0).unwrap();
        assert_eq!(field.total(), 0.0);
    }

    #[test]
    fn blob_discrete_sum_tracks_analytic_integral() {
        // 101×101 grid, σ = 3 px, peak 1000 centered: discrete sum within
        // 0.5% of 2π·9·1000 ≈ 56549 (oracle value precomputed).
        let field = gaussian_blob_field((101, 101), (50.0, 50.0), (3.0, 3.0), 1000.0).unwrap();
        let analytic = gaussian_blob_analytic_total(3.0, 3.0, 1000.0);
        assert_relative_eq!(analytic, 56548.66776461628, max_relative = 1e-12);
        assert!(((field.total() - analytic) / analytic).abs() < 0.005);
    }

    #[test]
    fn blob_far_outside_grid_is_negligible() {
        // center more than 4σ beyond the edge: max value below peak·e⁻⁸
        let field = gaussian_blob_field((50, 50), (-13.0, 25.0), (3.0, 3.0), 1000.0).unwrap();
        let max = field.values.iter().cloned().fold(0.0f64, f64::max);
        assert!(max < 1000.0 * (-8.0f64).exp());
    }

    #[test]
    fn zero_field_without_noise_reproduces_background_draw() {
        let bands = 10;
        let config = noiseless_config(bands, 7, 0.0); // covariance None
        let field = SimScene {
            rows: 4,
            cols: 5,
            sensor: SensorRef::Spec(toy_sensor(bands)),
            background: config.background.clone(),
            snr: None,
            reference_radiance: 1.0,
            smile: false,
            striping_std_frac: 0.0,
            seed: 7,
            plume: PlumeSpec::Zero,
            slope: SlopeModel::Band {
                log_slope: vec![-1e-5; bands],
            },
        }
        .field()
        .unwrap();
        let cube = render_cube(
            &field,
            &SlopeModel::Band {
                log_slope: vec![-1e-5; bands],
            },
            &config,
        )
        .unwrap();
        // no covariance, no noise, no striping: every pixel is the mean
        for v in cube.data.iter() {
            assert_eq!(*v, 1.0);
        }
    }

    #[test]
    fn same_seed_renders_bit_identical_cubes() {
        let bands = 12;
        let mut config = noiseless_config(bands, 42, 1e-6);
        config.snr = Some(150.0);
        config.striping_std_frac = 0.01;
        let field = gaussian_blob_field((16, 16), (8.0, 8.0), (2.0, 2.0), 400.0).unwrap();
        let slope = SlopeModel::Band {
            log_slope: vec![-1e-5; bands],
        };
        let a = render_cube(&field, &slope, &config).unwrap();
        let b = render_cube(&field, &slope, &config).unwrap();
        for (x, y) in a.data.iter().zip(b.data.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        // a different seed must change the data
        config.seed = 43;
        let c = render_cube(&field, &slope, &config).unwrap();
        assert!(a.data.iter().zip(c.data.iter()).any(|(x, y)| x != y));
    }

    #[test]
    fn log_ratio_equals_slope_times_enhancement_when_clean() {
        let bands = 10;
        let config = noiseless_config(bands, 3, 1e-6);
        let slope_values: Vec<f64> = (0..bands).map(|b| -1e-5 * (1.0 + b as f64 / 10.0)).collect();
        let slope = SlopeModel::Band {
            log_slope: slope_values.clone(),
        };
        let field = gaussian_blob_field((12, 12), (6.0, 6.0), (2.0, 2.0), 800.0).unwrap();
        let zero = PlumeField {
            values: Array2::zeros((12, 12)),
            generator: serde_json::json!({"type": "zero"}),
        };
        let with_plume = render_cube(&field, &slope, &config).unwrap();
        let without = render_cube(&zero, &slope, &config).unwrap();
        for b in 0..bands {
            for r in 0..12 {
                for c in 0..12 {
                    let expected = slope_values[b] * field.values[(r, c)];
                    let ratio = (with_plume.data[(b, r, c)] / without.data[(b, r, c)]).ln();
                    assert_relative_eq!(ratio, expected, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn noise_std_matches_reference_over_snr() {
        let bands = 6;
        let mut config = noiseless_config(bands, 11, 0.0);
        config.snr = Some(200.0);
        config.reference_radiance = 2.0;
        let zero = PlumeField {
            values: Array2::zeros((128, 128)),
            generator: serde_json::json!({"type": "zero"}),
        };
        let slope = SlopeModel::Band {
            log_slope: vec![-1e-5; bands],
        };
        let noisy = render_cube(&zero, &slope, &config).unwrap();
        config.snr = None;
        let clean = render_cube(&zero, &slope, &config).unwrap();
        let expected = 2.0 / 200.0;
        for b in [0, bands - 1] {
            let mut diffs = Vec::with_capacity(128 * 128);
            for r in 0..128 {
                for c in 0..128 {
                    diffs.push(noisy.data[(b, r, c)] - clean.data[(b, r, c)]);
                }
            }
            let measured = std_dev(&diffs);
            assert!(
                ((measured - expected) / expected).abs() < 0.03,
                "band {b}: measured {measured}, expected {expected}"
            );
        }
    }

    #[test]
    fn single_pixel_enhancement_is_recovered_within_two_percent() {
        let bands = 12;
        let config = noiseless_config(bands, 5, 1e-8);
        let mut values = Array2::zeros((32, 32));
        values[(16, 16)] = 500.0; // |slope·ΔX| = 5e-3, small-signal
        let field = PlumeField {
            values,
            generator: serde_json::json!({"type": "single"}),
        };
        let slope = SlopeModel::Band {
            log_slope: vec![-1e-5; bands],
        };
        let cube = render_cube(&field, &slope, &config).unwrap();
        let target = SlopeModel::Band {
            log_slope: vec![-1e-5; bands],
        }
        .to_target(&config.sensor)
        .unwrap();
        // keep the plume pixel out of the background statistics, the
        // job the exclusion set exists for
        let map = matched_filter(
            &cube,
            TargetInput::Band(&target),
            &RetrievalOptions {
                delta: 0.0,
                exclusion: Some([(16usize, 16usize)].into_iter().collect()),
                ..Default::default()
            },
        )
        .unwrap();
        let retrieved = map.values[(16, 16)];
        assert!(
            ((retrieved - 500.0) / 500.0).abs() < 0.02,
            "retrieved {retrieved}"
        );
    }

    #[test]
    fn round_trip_noiseless_blob_recovers_ime_within_three_percent() {
        let bands = 12;
        let config = noiseless_config(bands, 9, 1e-8);
        let field = gaussian_blob_field((64, 64), (32.0, 32.0), (2.0, 2.0), 800.0).unwrap();
        let slope = SlopeModel::Band {
            log_slope: vec![-1e-5; bands],
        };
        let settings = RoundTripSettings {
            exclude_truth_from_stats: true,
            ..Default::default()
        };
        let report = round_trip(&field, &slope, &config, &settings).unwrap();
        assert!(
            report.ime_rel_err.abs() < 0.03,
            "IME relative error {}",
            report.ime_rel_err
        );
        assert!(report.mask_pixels > 0);
    }

    #[test]
    fn textured_background_mixes_endmembers_convexly() {
        let bands = 8;
        let e1 = vec![1.0; bands];
        let e2: Vec<f64> = (0..bands).map(|b| 1.5 + 0.1 * b as f64).collect();
        let e3: Vec<f64> = (0..bands).map(|b| 0.5 + 0.05 * b as f64).collect();
        let config = SimConfig {
            sensor: toy_sensor(bands),
            background: BackgroundModel::Textured {
                endmembers: vec![e1, e2.clone(), e3.clone()],
                length_scale_px: 16.0,
            },
            snr: None,
            reference_radiance: 1.0,
            smile: false,
            striping_std_frac: 0.0,
            seed: 21,
        };
        let zero = PlumeField {
            values: Array2::zeros((24, 24)),
            generator: serde_json::json!({"type": "zero"}),
        };
        let slope = SlopeModel::Band {
            log_slope: vec![-1e-5; bands],
        };
        let cube = render_cube(&zero, &slope, &config).unwrap();
        // every value must lie inside the endmember hull per band
        for b in 0..bands {
            let lo = 0.5 + 0.05 * b as f64;
            let hi = 1.5 + 0.1 * b as f64;
            for r in 0..24 {
                for c in 0..24 {
                    let v = cube.data[(b, r, c)];
                    assert!(v >= lo - 1e-12 && v <= hi + 1e-12, "band {b}: {v}");
                }
            }
        }
        // and the scene must actually vary
        let first = cube.data[(0, 0, 0)];
        assert!(cube.data.iter().any(|v| (v - first).abs() > 1e-6));
    }

    #[test]
    fn scene_file_round_trip_and_render() {
        let bands = 10;
        let scene = SimScene {
            rows: 8,
            cols: 9,
            sensor: SensorRef::Spec(toy_sensor(bands)),
            background: flat_background(bands, 1.0, 1e-8),
            snr: Some(100.0),
            reference_radiance: 1.0,
            smile: false,
            striping_std_frac: 0.0,
            seed: 1,
            plume: PlumeSpec::GaussianBlob {
                center_row: 4.0,
                center_col: 4.0,
                sigma_row: 1.5,
                sigma_col: 1.5,
                peak_ppmm: 300.0,
            },
            slope: SlopeModel::Band {
                log_slope: vec![-1e-5; bands],
            },
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.json");
        io::write_json(&path, &scene).unwrap();
        let back = SimScene::from_json_file(&path).unwrap();
        assert_eq!(back, scene);
        let (field, cube) = back.render().unwrap();
        assert_eq!(field.rows(), 8);
        assert_eq!(cube.rows(), 8);
        assert_eq!(cube.cols(), 9);
        assert_eq!(cube.bands(), bands);
        cube.validate().unwrap();
    }

    #[test]
    fn field_file_round_trip() {
        let field = gaussian_blob_field((10, 12), (5.0, 6.0), (2.0, 2.0), 100.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.json");
        field.write_file(&path, Provenance::new()).unwrap();
        let back = PlumeField::read_file(&path).unwrap();
        assert_eq!(back.rows(), 10);
        assert_eq!(back.cols(), 12);
        for (a, b) in field.values.iter().zip(back.values.iter()) {
            assert_eq!(*a as f32, *b as f32);
        }
    }
}
