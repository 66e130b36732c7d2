use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{FeatureSet, InventoryEntry, PhonemeInventory, SegmentRecord};
use crate::artifact::{read_blob, write_blob};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// JSON manifest that sits next to a raw little-endian f32 row-major blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub encoder_tag: String,
    pub layer_index: u32,
    pub n_rows: usize,
    pub feature_dim: usize,
    /// Blob file name, relative to the manifest's directory.
    pub blob: String,
    /// CRC-32 of the blob bytes, 8 lowercase hex digits.
    pub checksum_crc32: String,
    pub inventory: Vec<InventoryEntry>,
    pub records: Vec<SegmentRecord>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

pub fn blob_checksum(bytes: &[u8]) -> String {
    format!("{:08x}", crc32fast::hash(bytes))
}

fn blob_path(manifest_path: &Path, blob: &str) -> PathBuf {
    manifest_path
        .parent()
        .map(|d| d.join(blob))
        .unwrap_or_else(|| PathBuf::from(blob))
}

/// Loads and validates a feature set. Nothing is returned unless every
/// invariant holds.
pub fn load_feature_set(manifest_path: impl AsRef<Path>) -> Result<FeatureSet> {
    let manifest_path = manifest_path.as_ref();
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::manifest(manifest_path, e))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::manifest(
            manifest_path,
            format!("unsupported format_version {}", manifest.format_version),
        ));
    }
    if manifest.feature_dim == 0 {
        return Err(Error::manifest(manifest_path, "feature_dim must be positive"));
    }
    if manifest.records.len() != manifest.n_rows {
        return Err(Error::ShapeMismatch(format!(
            "manifest declares {} rows but lists {} records",
            manifest.n_rows,
            manifest.records.len()
        )));
    }

    let n_values = manifest.n_rows * manifest.feature_dim;
    let (values, checksum) = read_blob(&blob_path(manifest_path, &manifest.blob), n_values)?;
    if !checksum.eq_ignore_ascii_case(&manifest.checksum_crc32) {
        return Err(Error::ChecksumMismatch {
            expected: manifest.checksum_crc32.clone(),
            actual: checksum,
        });
    }
    let matrix = Array2::from_shape_vec((manifest.n_rows, manifest.feature_dim), values)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let inventory = PhonemeInventory::new(manifest.inventory)?;
    Ok(FeatureSet::new(
        matrix,
        manifest.records,
        inventory,
        manifest.encoder_tag,
        manifest.layer_index,
    )?
    .with_metadata(manifest.metadata))
}

/// Writes `fs` as `<manifest_path>` plus a blob named after the manifest stem.
pub fn write_feature_set(fs: &FeatureSet, manifest_path: impl AsRef<Path>) -> Result<Manifest> {
    let manifest_path = manifest_path.as_ref();
    let stem = manifest_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("features");
    let blob_name = format!("{stem}.bin");
    let checksum = write_blob(
        &blob_path(manifest_path, &blob_name),
        fs.matrix().iter().copied(),
    )?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        encoder_tag: fs.encoder_tag().to_string(),
        layer_index: fs.layer_index(),
        n_rows: fs.n_rows(),
        feature_dim: fs.feature_dim(),
        blob: blob_name,
        checksum_crc32: checksum,
        inventory: fs.inventory().entries(),
        records: fs.records().to_vec(),
        metadata: fs.metadata().clone(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(manifest_path, json).map_err(|e| Error::io(manifest_path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::test_util::*;
    use crate::features::Split;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> FeatureSet {
        let m = ndarray::array![[1.0f32, 2.0, 3.0], [-4.0, 5.5, 6.25]];
        FeatureSet::new(
            m,
            vec![record(0, "u0", "a", Split::Train), record(1, "u0", "i", Split::Test)],
            inventory(&["a", "i"]),
            "enc/L3",
            3,
        )
        .unwrap()
    }

    #[test]
    fn minimal_file_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.json");
        write_feature_set(&tiny(), &path).unwrap();
        assert_eq!(std::fs::metadata(dir.path().join("set.bin")).unwrap().len(), 24);
        let fs = load_feature_set(&path).unwrap();
        assert_eq!(fs.records().len(), 2);
        assert_eq!(fs.encoder_tag(), "enc/L3");
    }

    #[test]
    fn short_blob_is_shape_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.json");
        write_feature_set(&tiny(), &path).unwrap();
        std::fs::write(dir.path().join("set.bin"), [0u8; 12]).unwrap();
        assert!(matches!(load_feature_set(&path), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn corrupted_blob_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.json");
        write_feature_set(&tiny(), &path).unwrap();
        let mut bytes = std::fs::read(dir.path().join("set.bin")).unwrap();
        bytes[0] ^= 1;
        std::fs::write(dir.path().join("set.bin"), bytes).unwrap();
        assert!(matches!(load_feature_set(&path), Err(Error::ChecksumMismatch { .. })));
    }

    #[test]
    fn garbage_manifest_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, "{ not json").unwrap();
        assert!(matches!(load_feature_set(&path), Err(Error::ManifestParse { .. })));
    }

    #[test]
    fn nan_in_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.json");
        let mut manifest = write_feature_set(&tiny(), &path).unwrap();
        let mut bytes = std::fs::read(dir.path().join("set.bin")).unwrap();
        bytes[4..8].copy_from_slice(&f32::NAN.to_le_bytes());
        manifest.checksum_crc32 = blob_checksum(&bytes);
        std::fs::write(dir.path().join("set.bin"), bytes).unwrap();
        std::fs::write(&path, serde_json::to_string(&manifest).unwrap()).unwrap();
        assert!(matches!(
            load_feature_set(&path),
            Err(Error::NonFiniteValue { row: 0, col: 1 })
        ));
    }

    #[test]
    fn random_round_trips_are_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..100 {
            let n = rng.gen_range(1..20);
            let f = rng.gen_range(1..9);
            let m = Array2::from_shape_fn((n, f), |_| {
                // arbitrary finite bit patterns, including subnormals
                loop {
                    let v = f32::from_bits(rng.gen());
                    if v.is_finite() {
                        break v;
                    }
                }
            });
            let recs = (0..n)
                .map(|i| {
                    let mut r = record(i, &format!("u{}", i % 3), ["a", "i"][i % 2], Split::Train);
                    r.segment_label = Some((i % 2) as u8);
                    r
                })
                .collect();
            let fs = FeatureSet::new(m, recs, inventory(&["a", "i"]), "x", 0).unwrap();
            let path = dir.path().join(format!("r{trial}.json"));
            write_feature_set(&fs, &path).unwrap();
            let back = load_feature_set(&path).unwrap();
            let bits = |s: &FeatureSet| s.matrix().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&fs), bits(&back));
            assert_eq!(fs.records(), back.records());
        }
    }
}
