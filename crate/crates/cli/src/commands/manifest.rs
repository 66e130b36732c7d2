use std::collections::BTreeMap;
use std::path::Path;

use mixgop_core::features::{load_feature_set, write_feature_set, Split};
use mixgop_core::synth::{planted_ood, PlantedOodConfig};
use serde::Serialize;

use crate::error::CliError;

#[derive(Debug, Serialize)]
pub struct ManifestSummary {
    pub n_rows: usize,
    pub feature_dim: usize,
    pub encoder_tag: String,
    pub layer_index: u32,
    pub n_phonemes: usize,
    pub split_rows: BTreeMap<String, usize>,
    pub n_utterances: usize,
    pub has_utterance_scores: bool,
}

/// Loads a manifest with every check applied and summarizes it.
pub fn validate_manifest(path: &Path) -> Result<ManifestSummary, CliError> {
    if !path.exists() {
        return Err(CliError::MissingFile(path.to_path_buf()));
    }
    let fs = load_feature_set(path)?;
    let mut split_rows = BTreeMap::new();
    for (name, split) in [("train", Split::Train), ("test", Split::Test)] {
        split_rows.insert(name.to_string(), fs.split_rows(split).len());
    }
    let mut utterances: Vec<&str> = fs.records().iter().map(|r| r.utterance_id.as_str()).collect();
    utterances.sort_unstable();
    utterances.dedup();
    Ok(ManifestSummary {
        n_rows: fs.n_rows(),
        feature_dim: fs.feature_dim(),
        encoder_tag: fs.encoder_tag().to_string(),
        layer_index: fs.layer_index(),
        n_phonemes: fs.inventory().len(),
        split_rows,
        n_utterances: utterances.len(),
        has_utterance_scores: super::has_ground_truth(&fs),
    })
}

/// Writes a planted-OOD feature set to `out`.
pub fn generate_synthetic(cfg: &PlantedOodConfig, out: &Path) -> Result<(), CliError> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let fs = planted_ood(cfg)?;
    write_feature_set(&fs, out)?;
    Ok(())
}
