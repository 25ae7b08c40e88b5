//! Files made of one JSON header line followed by little-endian `f32` data.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub(crate) fn write<H: Serialize>(path: &Path, header: &H, payload: impl IntoIterator<Item = f64>) -> Result<()> {
    let mut bytes = serde_json::to_vec(header)?;
    bytes.push(b'\n');
    for v in payload {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a file written by [`write`], checking its format tag and version
/// before decoding the rest of the header.
pub(crate) fn read<H: DeserializeOwned>(path: &Path, kind: &'static str, format: &str, version: u32) -> Result<(H, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let malformed = |detail: String| Error::Format { kind, detail };
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| malformed("missing header line".into()))?;
    let value: serde_json::Value = serde_json::from_slice(&bytes[..nl]).map_err(|e| malformed(format!("header: {e}")))?;
    let tag = value.get("format").and_then(|v| v.as_str()).unwrap_or_default();
    if tag != format {
        return Err(malformed(format!("format tag `{tag}` (expected `{format}`)")));
    }
    let found = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != version {
        return Err(Error::Version {
            kind,
            found,
            expected: version,
        });
    }
    let header = serde_json::from_value(value).map_err(|e| malformed(format!("header: {e}")))?;
    Ok((header, bytes[nl + 1..].to_vec()))
}

/// Decodes exactly `count` floats, rejecting short or overlong payloads.
pub(crate) fn floats(payload: &[u8], count: usize, kind: &'static str) -> Result<Vec<f64>> {
    let expected = count * 4;
    if payload.len() < expected {
        return Err(Error::Truncated {
            kind,
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::Format {
            kind,
            detail: format!("{} trailing payload bytes", payload.len() - expected),
        });
    }
    Ok(payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}
