//! Scene-specific unit target spectra.
//!
//! The matched filter needs the per-band change of log-radiance per unit
//! methane enhancement. That signature is derived in three steps:
//! interpolate the radiance LUT to the scene parameters
//! ([`crate::lut::RadianceLut::interpolate`]), fit `ln(L)` against the
//! enhancement levels per fine wavelength ([`regress_log_slope`]), and
//! average the fine slopes onto the sensor band grid with a Gaussian SRF
//! ([`convolve_to_bands`]). [`make_target`] chains the three and screens
//! out uninformative bands.

use ndarray::Array1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lut::{LutError, LutSlice, RadianceLut, SceneParams};
use crate::sensor::SensorSpec;

#[derive(Debug, Error)]
pub enum TargetError {
    #[error("regression needs at least 3 methane levels, got {0}")]
    TooFewLevels(usize),
    #[error("fine grid [{fine_lo}, {fine_hi}] nm does not cover the ±{support}·FWHM support of bands at {uncovered:?} nm")]
    InsufficientCoverage {
        fine_lo: f64,
        fine_hi: f64,
        support: f64,
        uncovered: Vec<f64>,
    },
    #[error("degenerate target: {kept} informative bands inside the window, need at least {min}")]
    DegenerateTarget { kept: usize, min: usize },
    #[error(transparent)]
    Lut(#[from] LutError),
}

/// Gaussian SRF width convention: `σ = FWHM / 2.3548`.
pub const FWHM_TO_SIGMA: f64 = 2.3548;
/// SRF truncation radius in units of FWHM; also the coverage the fine
/// grid must provide around each band center.
pub const SRF_SUPPORT_FWHM: f64 = 3.0;
/// A band is informative when `|log_slope|` exceeds this, (ppm·m)⁻¹.
pub const MIN_INFORMATIVE_SLOPE: f64 = 1e-9;
/// ... and its regression r² exceeds this.
pub const MIN_FIT_R2: f64 = 0.9;
/// Minimum surviving band count for a usable target.
pub const MIN_TARGET_BANDS: usize = 8;

/// Per-wavelength regression result on the fine LUT grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineSlope {
    pub wavelengths_nm: Vec<f64>,
    /// d ln(L) / d ΔX, (ppm·m)⁻¹; NaN where invalid.
    pub log_slope: Vec<f64>,
    pub fit_r2: Vec<f64>,
    /// False where a non-positive radiance made the log fit impossible.
    pub valid: Vec<bool>,
}

/// Unit methane signature on a sensor band grid.
///
/// `band_centers_nm` are the sensor's nominal centers even when the SRF
/// was shifted by the smile model; the shift moves the kernel, not the
/// band's identity. Entries may be NaN when a band's entire SRF support
/// carried no valid fine data; [`TargetSpectrum::screen`] removes them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpectrum {
    pub band_centers_nm: Vec<f64>,
    /// (ppm·m)⁻¹, non-positive where methane absorbs.
    pub log_slope: Vec<f64>,
    pub fit_r2: Vec<f64>,
    /// Retrieval window (low, high) nm this target was screened to.
    pub window_nm: (f64, f64),
}

impl TargetSpectrum {
    pub fn bands(&self) -> usize {
        self.band_centers_nm.len()
    }

    pub fn log_slope_array(&self) -> Array1<f64> {
        Array1::from_vec(self.log_slope.clone())
    }

    /// Keep bands inside `window`, with finite values, informative slope
    /// magnitude and acceptable fit quality.
    pub fn screen(&self, window: (f64, f64)) -> TargetSpectrum {
        let mut centers = Vec::new();
        let mut slopes = Vec::new();
        let mut r2s = Vec::new();
        for i in 0..self.bands() {
            let c = self.band_centers_nm[i];
            let s = self.log_slope[i];
            let r2 = self.fit_r2[i];
            if c >= window.0
                && c <= window.1
                && s.is_finite()
                && r2.is_finite()
                && s.abs() > MIN_INFORMATIVE_SLOPE
                && r2 > MIN_FIT_R2
            {
                centers.push(c);
                slopes.push(s);
                r2s.push(r2);
            }
        }
        TargetSpectrum {
            band_centers_nm: centers,
            log_slope: slopes,
            fit_r2: r2s,
            window_nm: window,
        }
    }
}

/// Across-track position used to evaluate the smile model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnPosition {
    pub index: usize,
    pub n_cols: usize,
}

/// Ordinary least-squares fit of `ln(L)` against the methane levels, per
/// fine wavelength. Wavelengths with a non-positive radiance anywhere on
/// the methane axis are flagged invalid rather than failing the whole
/// fit. A constant radiance yields slope 0 with r² = 0 by convention.
pub fn regress_log_slope(slice: &LutSlice) -> Result<FineSlope, TargetError> {
    let n = slice.ch4_ppmm.len();
    if n < 3 {
        return Err(TargetError::TooFewLevels(n));
    }
    let x = &slice.ch4_ppmm;
    let x_mean = x.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|xi| (xi - x_mean) * (xi - x_mean)).sum();

    let n_wl = slice.wavelengths_nm.len();
    let mut log_slope = vec![f64::NAN; n_wl];
    let mut fit_r2 = vec![f64::NAN; n_wl];
    let mut valid = vec![false; n_wl];

    let mut ys = vec![0.0f64; n];
    for l in 0..n_wl {
        let mut ok = true;
        for c in 0..n {
            let radiance = slice.radiance[(c, l)];
            if !(radiance > 0.0) || !radiance.is_finite() {
                ok = false;
                break;
            }
            ys[c] = radiance.ln();
        }
        if !ok {
            continue;
        }
        let y_mean = ys.iter().sum::<f64>() / n as f64;
        let mut sxy = 0.0;
        let mut syy = 0.0;
        for c in 0..n {
            let dy = ys[c] - y_mean;
            sxy += (x[c] - x_mean) * dy;
            syy += dy * dy;
        }
        let slope = sxy / sxx;
        let r2 = if syy == 0.0 {
            0.0
        } else {
            ((sxy * sxy) / (sxx * syy)).clamp(0.0, 1.0)
        };
        log_slope[l] = if syy == 0.0 { 0.0 } else { slope };
        fit_r2[l] = r2;
        valid[l] = true;
    }

    Ok(FineSlope {
        wavelengths_nm: slice.wavelengths_nm.clone(),
        log_slope,
        fit_r2,
        valid,
    })
}

/// Gaussian-SRF weighted average of fine values onto the sensor band
/// grid, kernel centered at each band center (shifted by the smile model
/// when `column` is given), σ = FWHM / 2.3548, weights normalized to
/// sum 1 over the valid fine points within ±3·FWHM.
pub fn convolve_to_bands(
    fine: &FineSlope,
    spec: &SensorSpec,
    column: Option<ColumnPosition>,
) -> Result<TargetSpectrum, TargetError> {
    let shift = column.map_or(0.0, |c| spec.smile_shift_at(c.index, c.n_cols));
    let fine_lo = fine.wavelengths_nm[0];
    let fine_hi = *fine.wavelengths_nm.last().unwrap();

    let mut uncovered = Vec::new();
    for (i, center) in spec.band_centers_nm.iter().enumerate() {
        let c = center + shift;
        let radius = SRF_SUPPORT_FWHM * spec.fwhm_nm[i];
        if c - radius < fine_lo || c + radius > fine_hi {
            uncovered.push(*center);
        }
    }
    if !uncovered.is_empty() {
        return Err(TargetError::InsufficientCoverage {
            fine_lo,
            fine_hi,
            support: SRF_SUPPORT_FWHM,
            uncovered,
        });
    }

    let n_bands = spec.bands();
    let mut log_slope = vec![f64::NAN; n_bands];
    let mut fit_r2 = vec![f64::NAN; n_bands];
    for b in 0..n_bands {
        let c = spec.band_centers_nm[b] + shift;
        let fwhm = spec.fwhm_nm[b];
        let sigma = fwhm / FWHM_TO_SIGMA;
        let radius = SRF_SUPPORT_FWHM * fwhm;
        let start = fine.wavelengths_nm.partition_point(|w| *w < c - radius);
        let stop = fine.wavelengths_nm.partition_point(|w| *w <= c + radius);
        let mut sum_w = 0.0;
        let mut sum_ws = 0.0;
        let mut sum_wr = 0.0;
        for i in start..stop {
            if !fine.valid[i] {
                continue;
            }
            let u = (fine.wavelengths_nm[i] - c) / sigma;
            let w = (-0.5 * u * u).exp();
            sum_w += w;
            sum_ws += w * fine.log_slope[i];
            sum_wr += w * fine.fit_r2[i];
        }
        if sum_w > 0.0 {
            log_slope[b] = sum_ws / sum_w;
            fit_r2[b] = sum_wr / sum_w;
        }
    }

    Ok(TargetSpectrum {
        band_centers_nm: spec.band_centers_nm.clone(),
        log_slope,
        fit_r2,
        window_nm: (
            spec.band_centers_nm[0],
            *spec.band_centers_nm.last().unwrap(),
        ),
    })
}

/// Interpolate + regress, producing the fine-grid slope for a scene.
/// Column-wise retrieval re-convolves this per column.
pub fn make_fine_slope(lut: &RadianceLut, params: &SceneParams) -> Result<FineSlope, TargetError> {
    let slice = lut.interpolate(params)?;
    regress_log_slope(&slice)
}

/// Full target pipeline: interpolate → regress → convolve → screen.
/// Bands outside the retrieval window (default: the sensor's methane
/// window) or failing the informativeness screen are dropped; fewer than
/// [`MIN_TARGET_BANDS`] survivors is an error.
pub fn make_target(
    lut: &RadianceLut,
    params: &SceneParams,
    spec: &SensorSpec,
    window_nm: Option<(f64, f64)>,
    column: Option<ColumnPosition>,
) -> Result<TargetSpectrum, TargetError> {
    let fine = make_fine_slope(lut, params)?;
    let bands = convolve_to_bands(&fine, spec, column)?;
    let window = window_nm.unwrap_or_else(|| spec.default_window_nm());
    let screened = bands.screen(window);
    if screened.bands() < MIN_TARGET_BANDS {
        return Err(TargetError::DegenerateTarget {
            kept: screened.bands(),
            min: MIN_TARGET_BANDS,
        });
    }
    Ok(screened)
}
