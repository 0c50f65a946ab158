//! Static sensor descriptions.
//!
//! A [`SensorSpec`] bundles everything the rest of the pipeline needs to
//! know about an instrument: its band grid and SRF widths, ground sampling
//! distance, a reference SNR for simulation, the across-track smile
//! magnitude, and the effective-wind coefficients used by flux
//! quantification. Specs are immutable value objects and safe to share
//! across workers.
//!
//! Built-in specs carry published values for PRISMA, EnMAP, EMIT and
//! GHGSat-class instruments: GSDs of 30 m / 30 m / 60 m / 50 m, smile
//! magnitudes of 2.8 nm (PRISMA) and 1.3 nm (EnMAP), SRF widths of
//! 10 / 7.8 / 7 nm in the 2300-nm window, and the per-sensor linear
//! effective-wind models. EnMAP's reference SNR is twice PRISMA's; the
//! absolute values (100 / 200 / 200 at unit reference radiance) are
//! simulation knobs, not instrument measurements. Band grids are uniform
//! engineering grids sized so the 2300-nm retrieval window holds 47
//! (PRISMA), 43 (EnMAP) and 48 (EMIT) channels; GHGSat-class specs get a
//! fine 1-nm grid around the 1650-nm feature. No effective-wind model is
//! published for GHGSat, so its spec deliberately carries none and flux
//! quantification demands an explicit override instead of silently
//! borrowing another sensor's model.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{self, IoError};

#[derive(Debug, Error)]
pub enum SensorError {
    #[error("unknown sensor name: {0}")]
    UnknownSensor(String),
    #[error("invalid sensor spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SensorName {
    #[serde(rename = "PRISMA")]
    Prisma,
    #[serde(rename = "EnMAP")]
    Enmap,
    #[serde(rename = "EMIT")]
    Emit,
    #[serde(rename = "GHGSAT")]
    Ghgsat,
    #[serde(rename = "CUSTOM")]
    Custom,
}

impl SensorName {
    pub fn parse(s: &str) -> Result<Self, SensorError> {
        match s.to_ascii_uppercase().as_str() {
            "PRISMA" => Ok(Self::Prisma),
            "ENMAP" => Ok(Self::Enmap),
            "EMIT" => Ok(Self::Emit),
            "GHGSAT" => Ok(Self::Ghgsat),
            "CUSTOM" => Ok(Self::Custom),
            other => Err(SensorError::UnknownSensor(other.to_string())),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Prisma => "PRISMA",
            Self::Enmap => "EnMAP",
            Self::Emit => "EMIT",
            Self::Ghgsat => "GHGSAT",
            Self::Custom => "CUSTOM",
        }
    }
}

impl std::fmt::Display for SensorName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Linear effective-wind model `U_eff = slope * U_10 + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UeffCoeffs {
    pub slope: f64,
    pub intercept: f64,
}

/// Complete static description of a supported sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub name: SensorName,
    /// Ground sampling distance, meters.
    pub gsd_m: f64,
    /// Band centers, nanometers, strictly increasing.
    pub band_centers_nm: Vec<f64>,
    /// Per-band SRF full width at half maximum, nanometers.
    pub fwhm_nm: Vec<f64>,
    /// Dimensionless SNR at reference radiance 1.0; a simulation knob.
    pub snr_reference: f64,
    /// Maximum across-track band-center deviation, nanometers. The shift
    /// ramps linearly from -max/2 at the first column to +max/2 at the last.
    pub smile_shift_nm: f64,
    /// Effective-wind coefficients; absent for sensors without a
    /// published model (GHGSat).
    pub ueff_coeffs: Option<UeffCoeffs>,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * (i as f64) / ((n - 1) as f64))
        .collect()
}

impl SensorSpec {
    /// Built-in spec for one of the four supported instruments.
    pub fn builtin(name: SensorName) -> Result<Self, SensorError> {
        let spec = match name {
            SensorName::Prisma => Self {
                name,
                gsd_m: 30.0,
                band_centers_nm: linspace(2100.0, 2450.0, 47),
                fwhm_nm: vec![10.0; 47],
                snr_reference: 100.0,
                smile_shift_nm: 2.8,
                ueff_coeffs: Some(UeffCoeffs {
                    slope: 0.37,
                    intercept: 0.70,
                }),
            },
            SensorName::Enmap => Self {
                name,
                gsd_m: 30.0,
                band_centers_nm: linspace(2100.0, 2450.0, 43),
                fwhm_nm: vec![7.8; 43],
                snr_reference: 200.0,
                smile_shift_nm: 1.3,
                ueff_coeffs: Some(UeffCoeffs {
                    slope: 0.37,
                    intercept: 0.69,
                }),
            },
            SensorName::Emit => Self {
                name,
                gsd_m: 60.0,
                band_centers_nm: linspace(2100.0, 2450.0, 48),
                fwhm_nm: vec![7.0; 48],
                snr_reference: 200.0,
                smile_shift_nm: 0.0,
                ueff_coeffs: Some(UeffCoeffs {
                    slope: 0.45,
                    intercept: 0.67,
                }),
            },
            SensorName::Ghgsat => Self {
                name,
                gsd_m: 50.0,
                band_centers_nm: linspace(1625.0, 1675.0, 51),
                fwhm_nm: vec![1.0; 51],
                snr_reference: 100.0,
                smile_shift_nm: 0.0,
                ueff_coeffs: None,
            },
            SensorName::Custom => {
                return Err(SensorError::UnknownSensor(
                    "CUSTOM has no built-in values; load a spec file".to_string(),
                ))
            }
        };
        debug_assert!(spec.validate().is_ok());
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SensorError> {
        if !(self.gsd_m > 0.0) {
            return Err(SensorError::InvalidSpec(format!(
                "gsd_m must be > 0, got {}",
                self.gsd_m
            )));
        }
        if self.band_centers_nm.len() < 2 {
            return Err(SensorError::InvalidSpec(
                "need at least 2 bands".to_string(),
            ));
        }
        if self.band_centers_nm.len() != self.fwhm_nm.len() {
            return Err(SensorError::InvalidSpec(format!(
                "{} band centers but {} fwhm values",
                self.band_centers_nm.len(),
                self.fwhm_nm.len()
            )));
        }
        for w in self.band_centers_nm.windows(2) {
            if !(w[1] > w[0]) {
                return Err(SensorError::InvalidSpec(format!(
                    "band_centers_nm not strictly increasing at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        if self.fwhm_nm.iter().any(|f| !(*f > 0.0)) {
            return Err(SensorError::InvalidSpec(
                "fwhm_nm values must all be > 0".to_string(),
            ));
        }
        if !(self.snr_reference > 0.0) {
            return Err(SensorError::InvalidSpec(format!(
                "snr_reference must be > 0, got {}",
                self.snr_reference
            )));
        }
        if !(self.smile_shift_nm >= 0.0) {
            return Err(SensorError::InvalidSpec(format!(
                "smile_shift_nm must be >= 0, got {}",
                self.smile_shift_nm
            )));
        }
        if let Some(c) = &self.ueff_coeffs {
            if !(c.slope > 0.0) || !(c.intercept >= 0.0) {
                return Err(SensorError::InvalidSpec(format!(
                    "ueff_coeffs require slope > 0 and intercept >= 0, got ({}, {})",
                    c.slope, c.intercept
                )));
            }
        }
        Ok(())
    }

    pub fn bands(&self) -> usize {
        self.band_centers_nm.len()
    }

    /// Pixel footprint area, m²; exactly `gsd_m²`.
    pub fn pixel_area_m2(&self) -> f64 {
        self.gsd_m * self.gsd_m
    }

    /// Across-track band-center shift at `column` of an image `n_cols`
    /// wide: a linear ramp from -max/2 to +max/2.
    pub fn smile_shift_at(&self, column: usize, n_cols: usize) -> f64 {
        if n_cols < 2 || self.smile_shift_nm == 0.0 {
            return 0.0;
        }
        self.smile_shift_nm * (column as f64 / (n_cols - 1) as f64 - 0.5)
    }

    /// Default retrieval window: the 2300-nm methane feature for SWIR
    /// grids, the 1650-nm feature for GHGSat-like grids. Chosen by where
    /// the band grid actually lies.
    pub fn default_window_nm(&self) -> (f64, f64) {
        let last = *self.band_centers_nm.last().unwrap();
        if last < 2000.0 {
            (1600.0, 1700.0)
        } else {
            (2100.0, 2450.0)
        }
    }

    pub fn to_json_file(&self, path: &Path) -> Result<(), IoError> {
        io::write_json(path, self)
    }

    pub fn from_json_file(path: &Path) -> Result<Self, IoError> {
        let spec: Self = io::read_json(path)?;
        spec.validate()
            .map_err(|e| IoError::format(path, e.to_string()))?;
        Ok(spec)
    }
}
