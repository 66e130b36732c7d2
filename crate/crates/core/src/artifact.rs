//! Shared on-disk convention for trained models: a JSON header next to a raw
//! little-endian f32 blob, the same layout as feature blobs.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::blob_checksum;

pub const ARTIFACT_VERSION: u32 = 1;

/// Writes `values` as f32le and returns the CRC-32 hex of the bytes.
pub fn write_blob(path: &Path, values: impl IntoIterator<Item = f32>) -> Result<String> {
    let bytes: Vec<u8> = values.into_iter().flat_map(f32::to_le_bytes).collect();
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(blob_checksum(&bytes))
}

/// Reads exactly `expected_len` f32le values and the blob's CRC-32 hex.
pub fn read_blob(path: &Path, expected_len: usize) -> Result<(Vec<f32>, String)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected_len * 4 {
        return Err(Error::ShapeMismatch(format!(
            "{} holds {} bytes, expected {}",
            path.display(),
            bytes.len(),
            expected_len * 4
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((values, blob_checksum(&bytes)))
}

#[derive(Debug, Serialize, Deserialize)]
struct Envelope<H> {
    kind: String,
    format_version: u32,
    blob: String,
    checksum_crc32: String,
    header: H,
}

fn sibling_blob(json_path: &Path) -> (PathBuf, String) {
    let stem = json_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("artifact");
    let name = format!("{stem}.bin");
    let path = json_path
        .parent()
        .map(|d| d.join(&name))
        .unwrap_or_else(|| PathBuf::from(&name));
    (path, name)
}

pub fn write_artifact<H: Serialize>(
    json_path: &Path,
    kind: &str,
    header: &H,
    values: impl IntoIterator<Item = f32>,
) -> Result<()> {
    let (blob_path, blob) = sibling_blob(json_path);
    let checksum_crc32 = write_blob(&blob_path, values)?;
    let envelope = Envelope {
        kind: kind.to_string(),
        format_version: ARTIFACT_VERSION,
        blob,
        checksum_crc32,
        header,
    };
    let json = serde_json::to_string_pretty(&envelope).expect("header serializes");
    std::fs::write(json_path, json).map_err(|e| Error::io(json_path, e))
}

/// Reads an artifact of the given kind; `blob_len` computes the expected
/// number of f32 values from the header.
pub fn read_artifact<H: DeserializeOwned>(
    json_path: &Path,
    kind: &str,
    blob_len: impl FnOnce(&H) -> usize,
) -> Result<(H, Vec<f32>)> {
    let text = std::fs::read_to_string(json_path).map_err(|e| Error::io(json_path, e))?;
    let envelope: Envelope<H> =
        serde_json::from_str(&text).map_err(|e| Error::manifest(json_path, e))?;
    if envelope.kind != kind {
        return Err(Error::manifest(
            json_path,
            format!("expected a {kind} artifact, found {}", envelope.kind),
        ));
    }
    if envelope.format_version != ARTIFACT_VERSION {
        return Err(Error::manifest(
            json_path,
            format!("unsupported format_version {}", envelope.format_version),
        ));
    }
    let blob_path = json_path
        .parent()
        .map(|d| d.join(&envelope.blob))
        .unwrap_or_else(|| PathBuf::from(&envelope.blob));
    let len = blob_len(&envelope.header);
    let (values, checksum) = read_blob(&blob_path, len)?;
    if !checksum.eq_ignore_ascii_case(&envelope.checksum_crc32) {
        return Err(Error::ChecksumMismatch {
            expected: envelope.checksum_crc32,
            actual: checksum,
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::manifest(json_path, "blob contains non-finite values"));
    }
    Ok((envelope.header, values))
}
