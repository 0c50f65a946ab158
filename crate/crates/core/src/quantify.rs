//! Emission-rate quantification with the Integrated Mass Enhancement model.
//!
//! A delineated plume polygon is rasterized onto the enhancement map by
//! pixel-center inclusion, the masked per-pixel enhancements (in ppb) are
//! summed and scaled to kilograms,
//!
//! ```text
//! IME = k · Σ ΔX(i),     k = (M_CH4 / M_a) · Σ_a · A_p · 1e-9
//! ```
//!
//! and the flow rate follows from the effective wind and the plume
//! length scale `L = sqrt(n_p · A_p)`:
//!
//! ```text
//! Q = IME · U_eff / L · 3600          [kg/h]
//! ```
//!
//! `IME · U_eff / L` is kg/s; the 3600 s/h factor is applied explicitly.
//! The effective wind is the sensor-specific linear function of the 10-m
//! wind speed; sensors without published coefficients (GHGSat) require an
//! explicit override.

use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{self, IoError};
use crate::retrieval::{EnhancementMap, Units};
use crate::sensor::SensorSpec;

#[derive(Debug, Error)]
pub enum QuantifyError {
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),
    #[error("plume mask is empty: the polygon covers no pixel centers inside the map")]
    EmptyMask,
    #[error("enhancement map must be in ppb for IME; convert it first")]
    UnitMismatch,
    #[error("mask pixel ({0}, {1}) lies outside the map")]
    OutOfBounds(usize, usize),
    #[error("sensor {0} has no effective-wind coefficients; supply an explicit U_eff")]
    MissingUeffCoeffs(String),
    #[error("{what} must be > 0, got {value}")]
    NonPositive { what: &'static str, value: f64 },
    #[error("invalid atmosphere: {0}")]
    InvalidAtmosphere(String),
    #[error("invalid wind record: {0}")]
    InvalidWind(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Manually delineated plume outline in pixel coordinates. Vertices are
/// `(col, row)` with the pixel `(r, c)` spanning `[c, c+1) × [r, r+1)`,
/// so its center sits at `(c + 0.5, r + 0.5)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlumePolygon {
    pub vertices: Vec<(f64, f64)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PolygonFile {
    vertices: Vec<[f64; 2]>,
    crs: String,
}

impl PlumePolygon {
    pub fn new(vertices: Vec<(f64, f64)>) -> Result<Self, QuantifyError> {
        let poly = Self { vertices };
        poly.validate()?;
        Ok(poly)
    }

    pub fn validate(&self) -> Result<(), QuantifyError> {
        if self.vertices.len() < 3 {
            return Err(QuantifyError::InvalidPolygon(format!(
                "need at least 3 vertices, got {}",
                self.vertices.len()
            )));
        }
        if self
            .vertices
            .iter()
            .any(|(x, y)| !x.is_finite() || !y.is_finite())
        {
            return Err(QuantifyError::InvalidPolygon(
                "vertices must be finite".to_string(),
            ));
        }
        if self.area().abs() == 0.0 {
            return Err(QuantifyError::InvalidPolygon(
                "polygon area is zero".to_string(),
            ));
        }
        if self.self_intersects() {
            return Err(QuantifyError::InvalidPolygon(
                "polygon is self-intersecting".to_string(),
            ));
        }
        Ok(())
    }

    /// Signed shoelace area in pixel² units.
    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        let mut acc = 0.0;
        for i in 0..n {
            let (x1, y1) = self.vertices[i];
            let (x2, y2) = self.vertices[(i + 1) % n];
            acc += x1 * y2 - x2 * y1;
        }
        acc / 2.0
    }

    fn self_intersects(&self) -> bool {
        let n = self.vertices.len();
        let seg = |i: usize| (self.vertices[i], self.vertices[(i + 1) % n]);
        for i in 0..n {
            for j in (i + 1)..n {
                // skip adjacent edges (they share an endpoint)
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (a, b) = seg(i);
                let (c, d) = seg(j);
                if segments_properly_intersect(a, b, c, d) {
                    return true;
                }
            }
        }
        false
    }

    /// Even-odd test on point `(x, y)`.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let n = self.vertices.len();
        let mut inside = false;
        for i in 0..n {
            let (x1, y1) = self.vertices[i];
            let (x2, y2) = self.vertices[(i + 1) % n];
            if (y1 > y) != (y2 > y) {
                let x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1);
                if x < x_cross {
                    inside = !inside;
                }
            }
        }
        inside
    }

    pub fn to_json_file(&self, path: &Path) -> Result<(), IoError> {
        let file = PolygonFile {
            vertices: self.vertices.iter().map(|(x, y)| [*x, *y]).collect(),
            crs: "pixel".to_string(),
        };
        io::write_json(path, &file)
    }

    pub fn from_json_file(path: &Path) -> Result<Self, QuantifyError> {
        let file: PolygonFile = io::read_json(path)?;
        if file.crs != "pixel" {
            return Err(QuantifyError::InvalidPolygon(format!(
                "unsupported crs {:?}, expected \"pixel\"",
                file.crs
            )));
        }
        Self::new(file.vertices.iter().map(|[x, y]| (*x, *y)).collect())
    }
}

fn orient(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn segments_properly_intersect(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> bool {
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    o1 * o2 < 0.0 && o3 * o4 < 0.0
}

/// Rasterized plume: the pixels whose centers the polygon contains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlumeMask {
    /// `(row, col)` pixels, row-major order.
    pub pixels: Vec<(usize, usize)>,
    pub pixel_area_m2: f64,
}

impl PlumeMask {
    pub fn n_pixels(&self) -> usize {
        self.pixels.len()
    }
}

/// Pixel `(r, c)` joins the mask iff its center `(c + 0.5, r + 0.5)` lies
/// inside the polygon (even-odd rule). Out-of-map portions are clipped;
/// a polygon covering no in-map centers is an error.
pub fn rasterize_mask(
    poly: &PlumePolygon,
    rows: usize,
    cols: usize,
    pixel_area_m2: f64,
) -> Result<PlumeMask, QuantifyError> {
    poly.validate()?;
    if !(pixel_area_m2 > 0.0) {
        return Err(QuantifyError::NonPositive {
            what: "pixel_area_m2",
            value: pixel_area_m2,
        });
    }
    let xs: Vec<f64> = poly.vertices.iter().map(|(x, _)| *x).collect();
    let ys: Vec<f64> = poly.vertices.iter().map(|(_, y)| *y).collect();
    let x_min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let x_max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let y_min = ys.iter().cloned().fold(f64::INFINITY, f64::min);
    let y_max = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    let r_start = (y_min - 0.5).floor().max(0.0) as usize;
    let r_stop = ((y_max - 0.5).ceil().max(0.0) as usize + 1).min(rows);
    let c_start = (x_min - 0.5).floor().max(0.0) as usize;
    let c_stop = ((x_max - 0.5).ceil().max(0.0) as usize + 1).min(cols);

    let mut pixels = Vec::new();
    for r in r_start..r_stop {
        for c in c_start..c_stop {
            if poly.contains(c as f64 + 0.5, r as f64 + 0.5) {
                pixels.push((r, c));
            }
        }
    }
    if pixels.is_empty() {
        return Err(QuantifyError::EmptyMask);
    }
    Ok(PlumeMask {
        pixels,
        pixel_area_m2,
    })
}

/// Atmospheric constants for the scaling factor. The column-integrated
/// dry air mass Σ_a is always recomputed from pressure and gravity,
/// never stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtmosphereParams {
    pub molar_mass_ch4_gmol: f64,
    pub molar_mass_air_gmol: f64,
    pub surface_pressure_pa: f64,
    pub gravity_ms2: f64,
}

impl Default for AtmosphereParams {
    fn default() -> Self {
        Self {
            molar_mass_ch4_gmol: 16.04,
            molar_mass_air_gmol: 28.9644,
            surface_pressure_pa: 101_325.0,
            gravity_ms2: 9.806_65,
        }
    }
}

impl AtmosphereParams {
    pub fn validate(&self) -> Result<(), QuantifyError> {
        for (what, value) in [
            ("molar_mass_ch4_gmol", self.molar_mass_ch4_gmol),
            ("molar_mass_air_gmol", self.molar_mass_air_gmol),
            ("surface_pressure_pa", self.surface_pressure_pa),
            ("gravity_ms2", self.gravity_ms2),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(QuantifyError::InvalidAtmosphere(format!(
                    "{what} must be > 0, got {value}"
                )));
            }
        }
        Ok(())
    }

    /// Σ_a = surface pressure / gravity, kg/m².
    pub fn column_air_mass_kgm2(&self) -> f64 {
        self.surface_pressure_pa / self.gravity_ms2
    }
}

/// 10-m wind observation driving the effective-wind model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindRecord {
    pub u10_ms: f64,
    /// Meteorological degrees, [0, 360).
    pub direction_deg: f64,
    pub source: String,
    pub timestamp: DateTime<Utc>,
}

impl WindRecord {
    pub fn validate(&self) -> Result<(), QuantifyError> {
        if !(self.u10_ms >= 0.0) || !self.u10_ms.is_finite() {
            return Err(QuantifyError::InvalidWind(format!(
                "u10_ms must be >= 0, got {}",
                self.u10_ms
            )));
        }
        if !(0.0..360.0).contains(&self.direction_deg) {
            return Err(QuantifyError::InvalidWind(format!(
                "direction_deg must be in [0, 360), got {}",
                self.direction_deg
            )));
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self, QuantifyError> {
        let record: Self = io::read_json(path)?;
        record.validate()?;
        Ok(record)
    }

    pub fn to_json_file(&self, path: &Path) -> Result<(), IoError> {
        io::write_json(path, self)
    }
}

/// Scaling factor `k = (M_CH4 / M_a) · Σ_a · A_p · 1e-9`, kg per ppb per
/// pixel.
pub fn scaling_factor(atm: &AtmosphereParams, pixel_area_m2: f64) -> f64 {
    (atm.molar_mass_ch4_gmol / atm.molar_mass_air_gmol)
        * atm.column_air_mass_kgm2()
        * pixel_area_m2
        * 1e-9
}

/// Integrated mass enhancement, kg: `k` times the masked sum of per-pixel
/// enhancements. The map must carry ppb; negative values sum as-is.
pub fn ime(map: &EnhancementMap, mask: &PlumeMask, k: f64) -> Result<f64, QuantifyError> {
    ime_with(map, mask, k, false)
}

pub fn ime_with(
    map: &EnhancementMap,
    mask: &PlumeMask,
    k: f64,
    clamp_negative: bool,
) -> Result<f64, QuantifyError> {
    if map.units != Units::Ppb {
        return Err(QuantifyError::UnitMismatch);
    }
    if mask.pixels.is_empty() {
        return Err(QuantifyError::EmptyMask);
    }
    let (rows, cols) = (map.rows(), map.cols());
    let mut sum = 0.0;
    for &(r, c) in &mask.pixels {
        if r >= rows || c >= cols {
            return Err(QuantifyError::OutOfBounds(r, c));
        }
        let v = map.values[(r, c)];
        sum += if clamp_negative { v.max(0.0) } else { v };
    }
    Ok(k * sum)
}

/// Plume length scale `L = sqrt(n_p · A_p)`, meters.
pub fn plume_length(mask: &PlumeMask) -> Result<f64, QuantifyError> {
    if mask.pixels.is_empty() {
        return Err(QuantifyError::EmptyMask);
    }
    Ok((mask.n_pixels() as f64 * mask.pixel_area_m2).sqrt())
}

/// `U_eff = a·U_10 + b` from the sensor's coefficients, or the override
/// verbatim when given.
pub fn effective_wind(
    spec: &SensorSpec,
    wind: &WindRecord,
    override_ueff: Option<f64>,
) -> Result<f64, QuantifyError> {
    wind.validate()?;
    if let Some(u) = override_ueff {
        if !(u > 0.0) || !u.is_finite() {
            return Err(QuantifyError::NonPositive {
                what: "override U_eff",
                value: u,
            });
        }
        return Ok(u);
    }
    let coeffs = spec
        .ueff_coeffs
        .ok_or_else(|| QuantifyError::MissingUeffCoeffs(spec.name.to_string()))?;
    Ok(coeffs.slope * wind.u10_ms + coeffs.intercept)
}

/// `Q = IME · U_eff / L · 3600`, kg/h.
pub fn flux(ime_kg: f64, u_eff_ms: f64, plume_length_m: f64) -> Result<f64, QuantifyError> {
    if !(u_eff_ms > 0.0) {
        return Err(QuantifyError::NonPositive {
            what: "u_eff_ms",
            value: u_eff_ms,
        });
    }
    if !(plume_length_m > 0.0) {
        return Err(QuantifyError::NonPositive {
            what: "plume_length_m",
            value: plume_length_m,
        });
    }
    Ok(ime_kg * u_eff_ms / plume_length_m * 3600.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum UeffSource {
    Coefficients { slope: f64, intercept: f64 },
    Override,
}

/// Inputs a flux estimate was derived from, kept alongside the result so
/// every number in a report can be traced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxInputs {
    /// Content digest of the enhancement map, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map_id: Option<String>,
    pub sensor: String,
    pub n_pixels: usize,
    pub pixel_area_m2: f64,
    pub scaling_factor_kg_per_ppb: f64,
    pub ueff: UeffSource,
    pub wind: WindRecord,
    pub atmosphere: AtmosphereParams,
    pub clamp_negative: bool,
}

/// Flux estimate with all intermediates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxEstimate {
    pub ime_kg: f64,
    pub plume_length_m: f64,
    pub u_eff_ms: f64,
    pub q_kg_per_h: f64,
    pub inputs: FluxInputs,
}

impl FluxEstimate {
    /// The stored flux must be re-derivable from the stored intermediates.
    pub fn is_self_consistent(&self) -> bool {
        let rederived = self.ime_kg * self.u_eff_ms / self.plume_length_m * 3600.0;
        let scale = self.q_kg_per_h.abs().max(rederived.abs()).max(f64::MIN_POSITIVE);
        (self.q_kg_per_h - rederived).abs() <= 1e-12 * scale
    }
}

#[derive(Debug, Clone, Default)]
pub struct QuantifyConfig {
    pub override_ueff: Option<f64>,
    /// Clamp negative in-mask enhancements to zero before summing
    /// (default off: negatives are part of the noise budget).
    pub clamp_negative: bool,
    /// Digest of the map file, recorded in the estimate's provenance.
    pub map_id: Option<String>,
}

/// Full chain: convert to ppb → rasterize → k → IME → L → U_eff → Q.
pub fn quantify_plume(
    map: &EnhancementMap,
    poly: &PlumePolygon,
    spec: &SensorSpec,
    wind: &WindRecord,
    atm: &AtmosphereParams,
    config: &QuantifyConfig,
) -> Result<FluxEstimate, QuantifyError> {
    atm.validate()?;
    let map_ppb = crate::retrieval::convert_units(map, Units::Ppb);
    let pixel_area = spec.pixel_area_m2();
    let mask = rasterize_mask(poly, map_ppb.rows(), map_ppb.cols(), pixel_area)?;
    let k = scaling_factor(atm, pixel_area);
    let ime_kg = ime_with(&map_ppb, &mask, k, config.clamp_negative)?;
    let length_m = plume_length(&mask)?;
    let u_eff = effective_wind(spec, wind, config.override_ueff)?;
    let q = flux(ime_kg, u_eff, length_m)?;
    let ueff_source = match config.override_ueff {
        Some(_) => UeffSource::Override,
        None => {
            let c = spec.ueff_coeffs.unwrap();
            UeffSource::Coefficients {
                slope: c.slope,
                intercept: c.intercept,
            }
        }
    };
    Ok(FluxEstimate {
        ime_kg,
        plume_length_m: length_m,
        u_eff_ms: u_eff,
        q_kg_per_h: q,
        inputs: FluxInputs {
            map_id: config.map_id.clone(),
            sensor: spec.name.to_string(),
            n_pixels: mask.n_pixels(),
            pixel_area_m2: pixel_area,
            scaling_factor_kg_per_ppb: k,
            ueff: ueff_source,
            wind: wind.clone(),
            atmosphere: *atm,
            clamp_negative: config.clamp_negative,
        },
    })
}
