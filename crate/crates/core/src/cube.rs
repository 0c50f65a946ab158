//! Band-sequential radiance cube container.
//!
//! A [`RadianceCube`] is the at-sensor radiance grid the retrieval
//! consumes: `(band, row, col)` with per-band wavelength and FWHM
//! metadata and the sensor spec embedded, so a cube file is
//! self-describing. On disk: JSON header + flat little-endian `float32`
//! payload, band-sequential, row-major within each band — the in-memory
//! layout written straight out.

use std::path::Path;

use ndarray::{Array1, Array3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{self, IoError, Provenance};
use crate::sensor::SensorSpec;

#[derive(Debug, Error)]
pub enum CubeError {
    #[error("invalid cube: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Tolerance for matching cube wavelengths to sensor band centers, nm.
pub const BAND_MATCH_TOL_NM: f64 = 1e-6;

pub const CUBE_FORMAT: &str = "plume-cube/1";

#[derive(Debug, Clone)]
pub struct RadianceCube {
    pub sensor: SensorSpec,
    pub wavelengths_nm: Vec<f64>,
    pub fwhm_nm: Vec<f64>,
    /// Indexed `(band, row, col)`, W·m⁻²·sr⁻¹·nm⁻¹.
    pub data: Array3<f64>,
}

impl RadianceCube {
    pub fn bands(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn rows(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn cols(&self) -> usize {
        self.data.shape()[2]
    }

    /// Copy of the spectrum at one pixel.
    pub fn pixel_spectrum(&self, row: usize, col: usize) -> Array1<f64> {
        let bands = self.bands();
        let mut out = Array1::zeros(bands);
        for b in 0..bands {
            out[b] = self.data[(b, row, col)];
        }
        out
    }

    pub fn validate(&self) -> Result<(), CubeError> {
        let shape = self.data.shape();
        if shape[0] == 0 || shape[1] == 0 || shape[2] == 0 {
            return Err(CubeError::Invalid(format!(
                "cube dimensions must be positive, got {shape:?}"
            )));
        }
        if self.wavelengths_nm.len() != shape[0] || self.fwhm_nm.len() != shape[0] {
            return Err(CubeError::Invalid(format!(
                "{} bands but {} wavelengths / {} fwhm entries",
                shape[0],
                self.wavelengths_nm.len(),
                self.fwhm_nm.len()
            )));
        }
        for w in self.wavelengths_nm.windows(2) {
            if !(w[1] > w[0]) {
                return Err(CubeError::Invalid(format!(
                    "wavelengths not strictly increasing at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        // every cube band must sit on the sensor's band grid (the cube
        // may be a window-restricted subset of it)
        for wl in &self.wavelengths_nm {
            if !self
                .sensor
                .band_centers_nm
                .iter()
                .any(|c| (c - wl).abs() <= BAND_MATCH_TOL_NM)
            {
                return Err(CubeError::Invalid(format!(
                    "cube wavelength {wl} nm is not on the {} band grid",
                    self.sensor.name
                )));
            }
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(CubeError::Invalid(
                "radiance values must all be finite".to_string(),
            ));
        }
        Ok(())
    }

    /// Index of the cube band matching `wavelength_nm`, if any.
    pub fn band_index_of(&self, wavelength_nm: f64) -> Option<usize> {
        self.wavelengths_nm
            .iter()
            .position(|w| (w - wavelength_nm).abs() <= BAND_MATCH_TOL_NM)
    }

    pub fn write_file(&self, path: &Path, provenance: Provenance) -> Result<(), IoError> {
        let data_path = io::data_file_for(path);
        let header = CubeHeader {
            format: CUBE_FORMAT.to_string(),
            rows: self.rows(),
            cols: self.cols(),
            bands: self.bands(),
            wavelengths_nm: self.wavelengths_nm.clone(),
            fwhm_nm: self.fwhm_nm.clone(),
            interleave: "bsq".to_string(),
            dtype: "float32-le".to_string(),
            sensor: self.sensor.clone(),
            provenance,
            data_file: data_path
                .file_name()
                .unwrap()
                .to_string_lossy()
                .into_owned(),
        };
        io::write_json(path, &header)?;
        io::write_f32_payload(&data_path, self.data.as_slice().unwrap())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self, CubeError> {
        let header: CubeHeader = io::read_json(path)?;
        if header.format != CUBE_FORMAT {
            return Err(
                IoError::format(path, format!("unsupported format {:?}", header.format)).into(),
            );
        }
        if header.interleave != "bsq" || header.dtype != "float32-le" {
            return Err(IoError::format(
                path,
                format!(
                    "unsupported encoding {}/{}",
                    header.interleave, header.dtype
                ),
            )
            .into());
        }
        let data_path = path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&header.data_file);
        let len = header.bands * header.rows * header.cols;
        let values = io::read_f32_payload(&data_path, len)?;
        let data = Array3::from_shape_vec((header.bands, header.rows, header.cols), values)
            .map_err(|e| IoError::format(path, e.to_string()))?;
        let cube = Self {
            sensor: header.sensor,
            wavelengths_nm: header.wavelengths_nm,
            fwhm_nm: header.fwhm_nm,
            data,
        };
        cube.validate()?;
        Ok(cube)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CubeHeader {
    format: String,
    rows: usize,
    cols: usize,
    bands: usize,
    wavelengths_nm: Vec<f64>,
    fwhm_nm: Vec<f64>,
    interleave: String,
    dtype: String,
    sensor: SensorSpec,
    provenance: Provenance,
    data_file: String,
}
