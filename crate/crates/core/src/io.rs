//! Shared file-container plumbing.
//!
//! Every on-disk artifact follows the same convention: a JSON header next
//! to a flat little-endian `float32` payload. Headers carry the tool
//! version and a content digest of every input that produced the file, so
//! identical inputs always reproduce identical bytes. Output bodies never
//! contain timestamps.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("bad container {path}: {reason}")]
    Format { path: String, reason: String },
}

impl IoError {
    pub fn format(path: &Path, reason: impl Into<String>) -> Self {
        IoError::Format {
            path: path.display().to_string(),
            reason: reason.into(),
        }
    }
}

/// Digest algorithm used for all input hashes in provenance blocks.
pub const DIGEST_ALGORITHM: &str = "sha256";

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> Result<String, IoError> {
    let mut hasher = Sha256::new();
    let mut reader = BufReader::new(fs::File::open(path)?);
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = reader.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Provenance block embedded in every output header.
///
/// `inputs` maps a role name (e.g. `"cube"`) to the sha256 digest of the
/// input file's bytes; `params` records free-form run parameters. A
/// `BTreeMap` keeps serialization order stable.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Provenance {
    pub tool_version: String,
    pub digest_algorithm: String,
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
    #[serde(default)]
    pub params: BTreeMap<String, serde_json::Value>,
}

impl Provenance {
    pub fn new() -> Self {
        Self {
            tool_version: crate::TOOL_VERSION.to_string(),
            digest_algorithm: DIGEST_ALGORITHM.to_string(),
            inputs: BTreeMap::new(),
            params: BTreeMap::new(),
        }
    }

    pub fn with_input_file(mut self, role: &str, path: &Path) -> Result<Self, IoError> {
        let digest = digest_file(path)?;
        self.inputs.insert(role.to_string(), digest);
        Ok(self)
    }

    pub fn with_param(mut self, key: &str, value: serde_json::Value) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }
}

impl Default for Provenance {
    fn default() -> Self {
        Self::new()
    }
}

/// Companion binary path for a JSON header: same stem, `.bin` extension.
pub fn data_file_for(header_path: &Path) -> PathBuf {
    header_path.with_extension("bin")
}

/// Serialize a header as pretty JSON with a trailing newline. serde_json
/// emits struct fields in declaration order, so output is deterministic.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut writer = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut writer, value)?;
    writer.write_all(b"\n")?;
    writer.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let reader = BufReader::new(fs::File::open(path)?);
    Ok(serde_json::from_reader(reader)?)
}

/// Write values as little-endian `f32`, in iteration order.
pub fn write_f32_payload(path: &Path, values: &[f64]) -> Result<(), IoError> {
    let mut writer = BufWriter::new(fs::File::create(path)?);
    for v in values {
        writer.write_all(&(*v as f32).to_le_bytes())?;
    }
    writer.flush()?;
    Ok(())
}

/// Read exactly `expected_len` little-endian `f32` values, widened to `f64`.
pub fn read_f32_payload(path: &Path, expected_len: usize) -> Result<Vec<f64>, IoError> {
    let bytes = fs::read(path)?;
    if bytes.len() != expected_len * 4 {
        return Err(IoError::format(
            path,
            format!(
                "payload holds {} bytes, expected {} (= {} float32 values)",
                bytes.len(),
                expected_len * 4,
                expected_len
            ),
        ));
    }
    let mut out = Vec::with_capacity(expected_len);
    for chunk in bytes.chunks_exact(4) {
        out.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64);
    }
    Ok(out)
}
