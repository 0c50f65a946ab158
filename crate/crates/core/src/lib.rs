//! Methane plume retrieval and emission-flux quantification for
//! hyperspectral imaging spectrometers.
//!
//! The pipeline goes from at-sensor radiance cubes to per-pixel methane
//! column-enhancement maps (clutter-matched filter with scene-specific
//! target spectra derived from a radiative lookup table) and on to
//! emission flux estimates (Integrated Mass Enhancement model). A
//! synthetic-scene simulator provides ground truth for end-to-end
//! verification, and a comparison harness pairs near-simultaneous
//! acquisitions across sensors.
//!
//! Module map:
//!
//! - [`sensor`] — static sensor descriptions (band grid, SRF width, GSD,
//!   noise, smile, effective-wind coefficients)
//! - [`lut`] — radiance lookup tables: file format, multilinear
//!   interpolation, and a Beer–Lambert synthetic builder
//! - [`target`] — unit target spectra: log-linear regression and SRF
//!   convolution onto a sensor band grid
//! - [`cube`] — band-sequential radiance cube container
//! - [`retrieval`] — the clutter-matched filter and enhancement maps
//! - [`quantify`] — plume masks, IME, and flux estimation
//! - [`sim`] — synthetic scene generation and round-trip checks
//! - [`compare`] — acquisition pairing and flux-comparison reports

pub mod compare;
pub mod cube;
pub mod io;
pub mod linalg;
pub mod lut;
pub mod quantify;
pub mod retrieval;
pub mod rng;
pub mod sensor;
pub mod sim;
pub mod target;

pub use cube::RadianceCube;
pub use lut::{RadianceLut, SceneParams};
pub use retrieval::{EnhancementMap, Units};
pub use sensor::{SensorName, SensorSpec};
pub use target::TargetSpectrum;

/// Version string embedded in every file this toolkit writes.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
