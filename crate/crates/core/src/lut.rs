//! Radiance lookup tables.
//!
//! A [`RadianceLut`] stores precomputed at-sensor radiances on a grid of
//! scene parameters (sensor altitude, water vapor, ground elevation,
//! solar zenith angle) × methane enhancement × wavelength, standing in
//! for on-demand radiative-transfer runs. [`RadianceLut::interpolate`]
//! reduces the four scene axes multilinearly and hands the full
//! (enhancement × wavelength) slice to the regression in [`crate::target`].
//!
//! [`build_synthetic_lut`] fills a table from a Beer–Lambert forward
//! model — a continuum attenuated by `exp(-cross_section · ΔX · airmass)`
//! with a two-way airmass of `1/cos(SZA) + 1`. It is an in-repo stand-in
//! for external radiative-transfer output and doubles as the exactness
//! oracle for the regression stage. Externally produced tables in the
//! same container are ingested by [`RadianceLut::read_file`].
//!
//! On disk a LUT is a JSON header (axis node lists, wavelength grid,
//! dtype, layout) plus a flat little-endian `float32` payload, row-major
//! with the methane axis varying slowest among the axes and wavelength
//! fastest.

use std::path::Path;

use ndarray::{Array2, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{self, IoError, Provenance};

#[derive(Debug, Error)]
pub enum LutError {
    #[error("{axis} = {value} outside LUT axis range [{lo}, {hi}]")]
    OutOfHull {
        axis: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("invalid LUT: {0}")]
    InvalidLut(String),
    #[error("invalid absorption table: {0}")]
    InvalidAbsorption(String),
    #[error("solar zenith angle {0} deg: down-up path requires SZA < 90")]
    InvalidGeometry(f64),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Axis node lists, in the order they appear in the file header. The
/// memory layout of the radiance array is `[ch4, altitude, water vapor,
/// elevation, sza, wavelength]`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LutAxes {
    pub sensor_altitude_km: Vec<f64>,
    pub water_vapor_gcm2: Vec<f64>,
    pub ground_elevation_km: Vec<f64>,
    pub solar_zenith_deg: Vec<f64>,
    pub ch4_enhancement_ppmm: Vec<f64>,
}

impl LutAxes {
    fn validate(&self) -> Result<(), LutError> {
        for (name, axis) in self.named() {
            if axis.len() < 2 {
                return Err(LutError::InvalidLut(format!(
                    "axis {name} needs at least 2 nodes, got {}",
                    axis.len()
                )));
            }
            for w in axis.windows(2) {
                if !(w[1] > w[0]) {
                    return Err(LutError::InvalidLut(format!(
                        "axis {name} not strictly increasing at {} -> {}",
                        w[0], w[1]
                    )));
                }
            }
            if axis.iter().any(|v| !v.is_finite()) {
                return Err(LutError::InvalidLut(format!(
                    "axis {name} contains non-finite nodes"
                )));
            }
        }
        if self.ch4_enhancement_ppmm[0] != 0.0 {
            return Err(LutError::InvalidLut(format!(
                "ch4 axis must start at 0, got {}",
                self.ch4_enhancement_ppmm[0]
            )));
        }
        Ok(())
    }

    fn named(&self) -> [(&'static str, &Vec<f64>); 5] {
        [
            ("sensor_altitude_km", &self.sensor_altitude_km),
            ("water_vapor_gcm2", &self.water_vapor_gcm2),
            ("ground_elevation_km", &self.ground_elevation_km),
            ("solar_zenith_deg", &self.solar_zenith_deg),
            ("ch4_enhancement_ppmm", &self.ch4_enhancement_ppmm),
        ]
    }
}

/// Scene parameters for which a target spectrum is generated. Each value
/// must lie inside the closed hull of the corresponding LUT axis; there
/// is no extrapolation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub sensor_altitude_km: f64,
    pub water_vapor_gcm2: f64,
    pub ground_elevation_km: f64,
    pub solar_zenith_deg: f64,
}

/// Dense radiance table over (scene axes × methane enhancement × wavelength).
#[derive(Debug, Clone, PartialEq)]
pub struct RadianceLut {
    pub axes: LutAxes,
    pub wavelengths_nm: Vec<f64>,
    /// Shape `[n_ch4, n_alt, n_wv, n_elev, n_sza, n_wl]`, W·m⁻²·sr⁻¹·nm⁻¹.
    pub radiance: ArrayD<f64>,
}

/// Interpolated radiances at fixed scene parameters: the methane axis and
/// wavelength grid pass through intact.
#[derive(Debug, Clone)]
pub struct LutSlice {
    pub ch4_ppmm: Vec<f64>,
    pub wavelengths_nm: Vec<f64>,
    /// Shape `[n_ch4, n_wl]`.
    pub radiance: Array2<f64>,
}

/// Locate `x` on an axis: index `i` of the lower bracket node and the
/// fractional position in `[0, 1]` toward node `i + 1`. Exact at nodes.
fn bracket(axis: &[f64], x: f64, name: &'static str) -> Result<(usize, f64), LutError> {
    let lo = axis[0];
    let hi = *axis.last().unwrap();
    if !(x >= lo && x <= hi) {
        return Err(LutError::OutOfHull {
            axis: name,
            value: x,
            lo,
            hi,
        });
    }
    let i = match axis.binary_search_by(|a| a.partial_cmp(&x).unwrap()) {
        Ok(j) => j.min(axis.len() - 2),
        Err(j) => j - 1,
    };
    let t = (x - axis[i]) / (axis[i + 1] - axis[i]);
    Ok((i, t))
}

impl RadianceLut {
    pub fn shape(&self) -> [usize; 6] {
        [
            self.axes.ch4_enhancement_ppmm.len(),
            self.axes.sensor_altitude_km.len(),
            self.axes.water_vapor_gcm2.len(),
            self.axes.ground_elevation_km.len(),
            self.axes.solar_zenith_deg.len(),
            self.wavelengths_nm.len(),
        ]
    }

    pub fn validate(&self) -> Result<(), LutError> {
        self.axes.validate()?;
        if self.wavelengths_nm.len() < 2 {
            return Err(LutError::InvalidLut(
                "wavelength grid needs at least 2 points".to_string(),
            ));
        }
        for w in self.wavelengths_nm.windows(2) {
            if !(w[1] > w[0]) {
                return Err(LutError::InvalidLut(format!(
                    "wavelength grid not strictly increasing at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        if self.radiance.shape() != self.shape() {
            return Err(LutError::InvalidLut(format!(
                "radiance shape {:?} does not match axes {:?}",
                self.radiance.shape(),
                self.shape()
            )));
        }
        if self.radiance.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(LutError::InvalidLut(
                "radiances must all be finite and >= 0".to_string(),
            ));
        }
        Ok(())
    }

    /// Multilinear interpolation over the four scene axes. The result is
    /// exact at grid nodes and errors (naming the axis) outside the hull.
    pub fn interpolate(&self, params: &SceneParams) -> Result<LutSlice, LutError> {
        let (ia, ta) = bracket(
            &self.axes.sensor_altitude_km,
            params.sensor_altitude_km,
            "sensor_altitude_km",
        )?;
        let (iw, tw) = bracket(
            &self.axes.water_vapor_gcm2,
            params.water_vapor_gcm2,
            "water_vapor_gcm2",
        )?;
        let (ie, te) = bracket(
            &self.axes.ground_elevation_km,
            params.ground_elevation_km,
            "ground_elevation_km",
        )?;
        let (is, ts) = bracket(
            &self.axes.solar_zenith_deg,
            params.solar_zenith_deg,
            "solar_zenith_deg",
        )?;

        let n_ch4 = self.axes.ch4_enhancement_ppmm.len();
        let n_wl = self.wavelengths_nm.len();
        let mut out = Array2::<f64>::zeros((n_ch4, n_wl));

        for corner in 0..16u32 {
            let (da, dw, de, ds) = (
                (corner & 1) as usize,
                ((corner >> 1) & 1) as usize,
                ((corner >> 2) & 1) as usize,
                ((corner >> 3) & 1) as usize,
            );
            let weight = (if da == 1 { ta } else { 1.0 - ta })
                * (if dw == 1 { tw } else { 1.0 - tw })
                * (if de == 1 { te } else { 1.0 - te })
                * (if ds == 1 { ts } else { 1.0 - ts });
            if weight == 0.0 {
                continue;
            }
            for c in 0..n_ch4 {
                for l in 0..n_wl {
                    out[(c, l)] += weight
                        * self.radiance[IxDyn(&[c, ia + da, iw + dw, ie + de, is + ds, l])];
                }
            }
        }

        Ok(LutSlice {
            ch4_ppmm: self.axes.ch4_enhancement_ppmm.clone(),
            wavelengths_nm: self.wavelengths_nm.clone(),
            radiance: out,
        })
    }

    /// Write header JSON at `path` and the payload at the companion
    /// `.bin` path.
    pub fn write_file(&self, path: &Path, provenance: Provenance) -> Result<(), IoError> {
        let data_path = io::data_file_for(path);
        let header = LutHeader {
            format: LUT_FORMAT.to_string(),
            dtype: "float32-le".to_string(),
            layout: LUT_LAYOUT.to_string(),
            axes: self.axes.clone(),
            wavelengths_nm: self.wavelengths_nm.clone(),
            data_file: data_path
                .file_name()
                .unwrap()
                .to_string_lossy()
                .into_owned(),
            provenance,
        };
        io::write_json(path, &header)?;
        io::write_f32_payload(&data_path, self.radiance.as_slice().unwrap())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self, LutError> {
        let header: LutHeader = io::read_json(path)?;
        if header.format != LUT_FORMAT {
            return Err(
                IoError::format(path, format!("unsupported format {:?}", header.format)).into(),
            );
        }
        if header.dtype != "float32-le" {
            return Err(
                IoError::format(path, format!("unsupported dtype {:?}", header.dtype)).into(),
            );
        }
        let data_path = path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&header.data_file);
        let lut_shape = [
            header.axes.ch4_enhancement_ppmm.len(),
            header.axes.sensor_altitude_km.len(),
            header.axes.water_vapor_gcm2.len(),
            header.axes.ground_elevation_km.len(),
            header.axes.solar_zenith_deg.len(),
            header.wavelengths_nm.len(),
        ];
        let len = lut_shape.iter().product();
        let values = io::read_f32_payload(&data_path, len)?;
        let radiance = ArrayD::from_shape_vec(IxDyn(&lut_shape), values)
            .map_err(|e| IoError::format(path, e.to_string()))?;
        let lut = Self {
            axes: header.axes,
            wavelengths_nm: header.wavelengths_nm,
            radiance,
        };
        lut.validate()?;
        Ok(lut)
    }
}

pub const LUT_FORMAT: &str = "plume-lut/1";
pub const LUT_LAYOUT: &str = "row-major; ch4 slowest among axes, wavelength fastest";

#[derive(Debug, Serialize, Deserialize)]
struct LutHeader {
    format: String,
    dtype: String,
    layout: String,
    axes: LutAxes,
    wavelengths_nm: Vec<f64>,
    data_file: String,
    provenance: Provenance,
}

/// Per-wavelength methane absorption cross sections, (ppm·m)⁻¹.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsorptionTable {
    pub wavelengths_nm: Vec<f64>,
    pub cross_section_per_ppmm: Vec<f64>,
}

impl AbsorptionTable {
    pub fn new(wavelengths_nm: Vec<f64>, cross_section_per_ppmm: Vec<f64>) -> Result<Self, LutError> {
        let table = Self {
            wavelengths_nm,
            cross_section_per_ppmm,
        };
        table.validate()?;
        Ok(table)
    }

    fn validate(&self) -> Result<(), LutError> {
        if self.wavelengths_nm.len() != self.cross_section_per_ppmm.len() {
            return Err(LutError::InvalidAbsorption(format!(
                "{} wavelengths but {} cross sections",
                self.wavelengths_nm.len(),
                self.cross_section_per_ppmm.len()
            )));
        }
        if self.wavelengths_nm.len() < 2 {
            return Err(LutError::InvalidAbsorption(
                "need at least 2 rows".to_string(),
            ));
        }
        for w in self.wavelengths_nm.windows(2) {
            if !(w[1] > w[0]) {
                return Err(LutError::InvalidAbsorption(format!(
                    "wavelength_nm not strictly increasing at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        if self
            .cross_section_per_ppmm
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(LutError::InvalidAbsorption(
                "cross_section_per_ppmm values must be finite and >= 0".to_string(),
            ));
        }
        Ok(())
    }

    /// Read a two-column CSV with header row
    /// `wavelength_nm,cross_section_per_ppmm`.
    pub fn from_csv_file(path: &Path) -> Result<Self, LutError> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| LutError::InvalidAbsorption(e.to_string()))?;
        {
            let headers = reader
                .headers()
                .map_err(|e| LutError::InvalidAbsorption(e.to_string()))?;
            if headers.len() != 2
                || headers.get(0) != Some("wavelength_nm")
                || headers.get(1) != Some("cross_section_per_ppmm")
            {
                return Err(LutError::InvalidAbsorption(format!(
                    "expected header wavelength_nm,cross_section_per_ppmm, got {:?}",
                    headers
                )));
            }
        }
        let mut wavelengths = Vec::new();
        let mut xsec = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| LutError::InvalidAbsorption(e.to_string()))?;
            let parse = |field: &str, name: &str| -> Result<f64, LutError> {
                field.parse::<f64>().map_err(|_| {
                    LutError::InvalidAbsorption(format!(
                        "row {}: {name} value {:?} is not a number",
                        line + 2,
                        field
                    ))
                })
            };
            wavelengths.push(parse(&record[0], "wavelength_nm")?);
            xsec.push(parse(&record[1], "cross_section_per_ppmm")?);
        }
        Self::new(wavelengths, xsec)
    }
}

/// Baseline (methane-free) radiance model for the synthetic builder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Continuum {
    /// Scene-independent constant radiance.
    Flat { radiance: f64 },
    /// `zenith_radiance · cos(SZA)`: solar projection only.
    CosineSza { zenith_radiance: f64 },
    /// Affine in wavelength: `base + slope_per_nm · (λ - reference_nm)`.
    LinearInWavelength {
        base: f64,
        slope_per_nm: f64,
        reference_nm: f64,
    },
}

impl Continuum {
    pub fn eval(&self, solar_zenith_deg: f64, wavelength_nm: f64) -> f64 {
        match self {
            Continuum::Flat { radiance } => *radiance,
            Continuum::CosineSza { zenith_radiance } => {
                zenith_radiance * (solar_zenith_deg.to_radians()).cos()
            }
            Continuum::LinearInWavelength {
                base,
                slope_per_nm,
                reference_nm,
            } => base + slope_per_nm * (wavelength_nm - reference_nm),
        }
    }
}

/// Two-way airmass for a vertical down-up path bent by the solar zenith
/// angle: `1/cos(SZA) + 1`.
pub fn airmass(solar_zenith_deg: f64) -> Result<f64, LutError> {
    if !(solar_zenith_deg < 90.0) {
        return Err(LutError::InvalidGeometry(solar_zenith_deg));
    }
    Ok(1.0 / solar_zenith_deg.to_radians().cos() + 1.0)
}

/// Minimum methane-axis span for tables produced by the in-repo builder,
/// ppm·m.
pub const BUILDER_MIN_CH4_SPAN_PPMM: f64 = 64_000.0;

/// Fill a [`RadianceLut`] from the Beer–Lambert forward model
/// `radiance = continuum(params, λ) · exp(-cross_section(λ) · ΔX · airmass)`.
pub fn build_synthetic_lut(
    absorption: &AbsorptionTable,
    axes: &LutAxes,
    continuum: &Continuum,
) -> Result<RadianceLut, LutError> {
    absorption.validate()?;
    axes.validate()?;
    let ch4_span = *axes.ch4_enhancement_ppmm.last().unwrap();
    if ch4_span < BUILDER_MIN_CH4_SPAN_PPMM {
        return Err(LutError::InvalidLut(format!(
            "builder requires the ch4 axis to span at least [0, {BUILDER_MIN_CH4_SPAN_PPMM}] ppm·m, got [0, {ch4_span}]"
        )));
    }
    let airmasses: Vec<f64> = axes
        .solar_zenith_deg
        .iter()
        .map(|sza| airmass(*sza))
        .collect::<Result<_, _>>()?;

    let lut_shape = [
        axes.ch4_enhancement_ppmm.len(),
        axes.sensor_altitude_km.len(),
        axes.water_vapor_gcm2.len(),
        axes.ground_elevation_km.len(),
        axes.solar_zenith_deg.len(),
        absorption.wavelengths_nm.len(),
    ];
    let mut radiance = ArrayD::<f64>::zeros(IxDyn(&lut_shape));
    for (c, dx) in axes.ch4_enhancement_ppmm.iter().enumerate() {
        for a in 0..lut_shape[1] {
            for w in 0..lut_shape[2] {
                for e in 0..lut_shape[3] {
                    for (s, sza) in axes.solar_zenith_deg.iter().enumerate() {
                        let am = airmasses[s];
                        for (l, wl) in absorption.wavelengths_nm.iter().enumerate() {
                            let cont = continuum.eval(*sza, *wl);
                            let tau = absorption.cross_section_per_ppmm[l] * dx * am;
                            radiance[IxDyn(&[c, a, w, e, s, l])] = cont * (-tau).exp();
                        }
                    }
                }
            }
        }
    }

    let lut = RadianceLut {
        axes: axes.clone(),
        wavelengths_nm: absorption.wavelengths_nm.clone(),
        radiance,
    };
    lut.validate()?;
    Ok(lut)
}
