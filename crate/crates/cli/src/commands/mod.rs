//! Subcommand implementations. Each takes a resolved [`RunConfig`].

mod ablate;
mod analyze;
mod manifest;
mod train;

use std::path::Path;

use mixgop_core::features::{load_feature_set, subsample_per_phoneme, FeatureSet, Split};
use mixgop_core::ScoreTable;
use serde::Serialize;

pub use ablate::{ablate, AblationRow};
pub use analyze::analyze;
pub use manifest::{generate_synthetic, validate_manifest};
pub use train::{evaluate, score, train, train_models};

use crate::config::RunConfig;
use crate::error::CliError;

/// A validated configuration together with its hash.
pub struct Run {
    pub cfg: RunConfig,
    pub hash: String,
}

impl Run {
    pub fn new(cfg: RunConfig) -> Result<Self, CliError> {
        cfg.validate()?;
        let hash = cfg.hash();
        Ok(Self { cfg, hash })
    }

    pub fn out(&self) -> &Path {
        &self.cfg.output_dir
    }

    pub fn create_out(&self) -> Result<(), CliError> {
        std::fs::create_dir_all(self.out()).map_err(|e| CliError::io(self.out(), e))
    }

    /// Loads the primary manifest and checks its layer against the
    /// configured one.
    pub fn load_primary(&self) -> Result<FeatureSet, CliError> {
        let fs = load_feature_set(&self.cfg.manifest)?;
        if let Some(want) = self.cfg.layer_index {
            if fs.layer_index() != want {
                return Err(CliError::Usage(format!(
                    "{} holds layer {}, but layer {want} was requested",
                    self.cfg.manifest.display(),
                    fs.layer_index()
                )));
            }
        }
        Ok(fs)
    }
}

/// The training view of `fs` under the subsampling cap.
pub(crate) fn capped(fs: &FeatureSet, cap: Option<usize>, seed: u64) -> Result<FeatureSet, CliError> {
    Ok(match cap {
        Some(c) => subsample_per_phoneme(fs, c, seed)?,
        None => fs.clone(),
    })
}

pub(crate) fn has_ground_truth(fs: &FeatureSet) -> bool {
    fs.records()
        .iter()
        .any(|r| r.split == Split::Test && r.utterance_score.is_some())
}

#[derive(Serialize)]
struct ScoreRow<'a> {
    config_hash: &'a str,
    method_tag: &'a str,
    utterance_id: &'a str,
    segment_index: usize,
    row_index: usize,
    phoneme: &'a str,
    score: f64,
}

pub(crate) fn write_scores(path: &Path, hash: &str, table: &ScoreTable) -> Result<(), CliError> {
    let rows: Vec<ScoreRow<'_>> = table
        .entries()
        .iter()
        .map(|e| ScoreRow {
            config_hash: hash,
            method_tag: &e.method_tag,
            utterance_id: &e.utterance_id,
            segment_index: e.segment_index,
            row_index: e.row_index,
            phoneme: &e.phoneme,
            score: e.score,
        })
        .collect();
    crate::output::write_csv(path, &rows)
}
