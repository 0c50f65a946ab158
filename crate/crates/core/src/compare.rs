//! Multi-sensor acquisition pairing and flux comparison.
//!
//! Near-simultaneous acquisitions of the same site by different sensors
//! are paired by time difference and compared with the symmetric relative
//! flux difference `2|Q₁-Q₂| / (Q₁+Q₂)`. Flux values ride along as
//! printed in their source — including units the source left ambiguous —
//! rather than being silently converted; reports carry flags instead.

use std::fmt::Write as _;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{self, IoError, Provenance};
use crate::quantify::FluxEstimate;

#[derive(Debug, Error)]
pub enum CompareError {
    #[error("records mix site ids {0:?} and {1:?}")]
    MixedSites(String, String),
    #[error("invalid record{}: {reason}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    InvalidRecord { line: Option<usize>, reason: String },
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Flux units as printed by the source. `AsPrintedAmbiguous` preserves
/// cases where the source text is internally inconsistent about kg/h vs
/// t/h; the value is carried verbatim and flagged in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FluxUnits {
    #[serde(rename = "kg/h")]
    KgPerH,
    #[serde(rename = "t/h")]
    TPerH,
    #[serde(rename = "as-printed-ambiguous")]
    AsPrintedAmbiguous,
}

impl FluxUnits {
    pub fn label(&self) -> &'static str {
        match self {
            FluxUnits::KgPerH => "kg/h",
            FluxUnits::TPerH => "t/h",
            FluxUnits::AsPrintedAmbiguous => "as-printed-ambiguous",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExternalFlux {
    pub q: f64,
    pub units: FluxUnits,
}

/// Either a flux produced by this toolkit or an externally supplied value
/// (e.g. from a vendor L2 product).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FluxSource {
    External {
        q: f64,
        units: FluxUnits,
        /// Sub-plume components, when the source reports several,
        /// carried with the same unit caveats as the total.
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        sub_fluxes: Vec<ExternalFlux>,
    },
    Estimate { estimate: FluxEstimate },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionRecord {
    pub sensor: String,
    pub timestamp: DateTime<Utc>,
    pub site: String,
    pub flux: FluxSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enhancement_map: Option<String>,
}

impl AcquisitionRecord {
    /// Flux value as stored (no unit conversion).
    pub fn flux_value(&self) -> f64 {
        match &self.flux {
            FluxSource::External { q, .. } => *q,
            FluxSource::Estimate { estimate } => estimate.q_kg_per_h,
        }
    }

    pub fn flux_units(&self) -> FluxUnits {
        match &self.flux {
            FluxSource::External { units, .. } => *units,
            FluxSource::Estimate { .. } => FluxUnits::KgPerH,
        }
    }

    pub fn validate(&self) -> Result<(), CompareError> {
        let q = self.flux_value();
        if !q.is_finite() || q < 0.0 {
            return Err(CompareError::InvalidRecord {
                line: None,
                reason: format!("flux must be finite and >= 0, got {q}"),
            });
        }
        Ok(())
    }
}

/// Symmetric relative difference `2|Q₁-Q₂| / (Q₁+Q₂)`, with the
/// convention that two zero fluxes differ by 0.
pub fn relative_flux_difference(q1: f64, q2: f64) -> f64 {
    if q1 == 0.0 && q2 == 0.0 {
        return 0.0;
    }
    2.0 * (q1 - q2).abs() / (q1 + q2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub sensor_a: String,
    pub sensor_b: String,
    pub timestamp_a: DateTime<Utc>,
    pub timestamp_b: DateTime<Utc>,
    pub dt_s: f64,
    pub rel_flux_diff: f64,
    pub within_dt_max: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

fn pair_stats(a: &AcquisitionRecord, b: &AcquisitionRecord, dt_max_s: f64) -> PairStats {
    // earlier acquisition first; name order breaks exact ties
    let (first, second) = if (a.timestamp, &a.sensor) <= (b.timestamp, &b.sensor) {
        (a, b)
    } else {
        (b, a)
    };
    let dt_s = (second.timestamp - first.timestamp)
        .num_milliseconds()
        .abs() as f64
        / 1000.0;
    let mut flags = Vec::new();
    if dt_s > dt_max_s {
        flags.push("dt-exceeds-threshold".to_string());
    }
    let (ua, ub) = (first.flux_units(), second.flux_units());
    if ua == FluxUnits::AsPrintedAmbiguous || ub == FluxUnits::AsPrintedAmbiguous {
        flags.push("units-ambiguous".to_string());
    } else if ua != ub {
        flags.push("units-differ".to_string());
    }
    PairStats {
        sensor_a: first.sensor.clone(),
        sensor_b: second.sensor.clone(),
        timestamp_a: first.timestamp,
        timestamp_b: second.timestamp,
        dt_s,
        rel_flux_diff: relative_flux_difference(first.flux_value(), second.flux_value()),
        within_dt_max: dt_s <= dt_max_s,
        flags,
    }
}

/// All unordered record pairs with `|Δt| ≤ dt_max_s`, sorted by Δt
/// ascending with ties broken by the (sensor, sensor) name pair. Fewer
/// than two records yield an empty list, not an error.
pub fn pair_acquisitions(records: &[AcquisitionRecord], dt_max_s: f64) -> Vec<PairStats> {
    let mut pairs = Vec::new();
    for i in 0..records.len() {
        for j in (i + 1)..records.len() {
            let stats = pair_stats(&records[i], &records[j], dt_max_s);
            if stats.within_dt_max {
                pairs.push(stats);
            }
        }
    }
    sort_pairs(&mut pairs);
    pairs
}

fn sort_pairs(pairs: &mut [PairStats]) {
    pairs.sort_by(|p, q| {
        p.dt_s
            .partial_cmp(&q.dt_s)
            .unwrap()
            .then_with(|| p.sensor_a.cmp(&q.sensor_a))
            .then_with(|| p.sensor_b.cmp(&q.sensor_b))
    });
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub site: String,
    pub dt_max_s: f64,
    /// Records sorted by timestamp (sensor name breaks ties).
    pub records: Vec<AcquisitionRecord>,
    /// All pairwise statistics, beyond-threshold pairs included but
    /// flagged; sorted by Δt ascending.
    pub pairs: Vec<PairStats>,
    pub provenance: Provenance,
}

/// Pairwise comparison over one site's records.
pub fn build_report(
    site: &str,
    records: &[AcquisitionRecord],
    dt_max_s: f64,
    provenance: Provenance,
) -> Result<ComparisonReport, CompareError> {
    for r in records {
        r.validate()?;
        if r.site != site {
            return Err(CompareError::MixedSites(site.to_string(), r.site.clone()));
        }
    }
    let mut sorted: Vec<AcquisitionRecord> = records.to_vec();
    sorted.sort_by(|a, b| {
        a.timestamp
            .cmp(&b.timestamp)
            .then_with(|| a.sensor.cmp(&b.sensor))
    });
    let mut pairs = Vec::new();
    for i in 0..sorted.len() {
        for j in (i + 1)..sorted.len() {
            pairs.push(pair_stats(&sorted[i], &sorted[j], dt_max_s));
        }
    }
    sort_pairs(&mut pairs);
    Ok(ComparisonReport {
        site: site.to_string(),
        dt_max_s,
        records: sorted,
        pairs,
        provenance,
    })
}

/// One record per line; parse failures name the 1-based line number.
pub fn read_records_jsonl(path: &Path) -> Result<Vec<AcquisitionRecord>, CompareError> {
    let text = std::fs::read_to_string(path).map_err(IoError::from)?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: AcquisitionRecord =
            serde_json::from_str(line).map_err(|e| CompareError::InvalidRecord {
                line: Some(i + 1),
                reason: e.to_string(),
            })?;
        record.validate().map_err(|e| CompareError::InvalidRecord {
            line: Some(i + 1),
            reason: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

pub fn write_report(path: &Path, report: &ComparisonReport) -> Result<(), IoError> {
    io::write_json(path, report)
}

/// Plain-text table rendering of a report.
pub fn render_table(report: &ComparisonReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "site: {}", report.site);
    let _ = writeln!(out, "records:");
    let _ = writeln!(
        out,
        "  {:<10} {:<22} {:>12} {:<22}",
        "sensor", "timestamp", "flux", "units"
    );
    for r in &report.records {
        let _ = writeln!(
            out,
            "  {:<10} {:<22} {:>12.3} {:<22}",
            r.sensor,
            r.timestamp.format("%Y-%m-%dT%H:%M:%SZ"),
            r.flux_value(),
            r.flux_units().label()
        );
    }
    let _ = writeln!(out, "pairs (dt_max = {} s):", report.dt_max_s);
    let _ = writeln!(
        out,
        "  {:<10} {:<10} {:>10} {:>10} {:<30}",
        "sensor_a", "sensor_b", "dt_s", "rel_diff", "flags"
    );
    for p in &report.pairs {
        let _ = writeln!(
            out,
            "  {:<10} {:<10} {:>10.1} {:>10.4} {:<30}",
            p.sensor_a,
            p.sensor_b,
            p.dt_s,
            p.rel_flux_diff,
            p.flags.join(",")
        );
    }
    out
}
