//! Segment-level feature sets: one pooled feature vector per aligned phoneme
//! segment, plus the metadata needed for scoring and analysis.

mod inventory;
mod io;

use std::collections::{BTreeMap, HashMap};

use ndarray::{Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use inventory::{InventoryEntry, NaturalClassTable, PhonemeInventory, BOUNDARY};
pub use io::{blob_checksum, load_feature_set, write_feature_set, Manifest, FORMAT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub row_index: usize,
    pub utterance_id: String,
    pub speaker_id: String,
    pub phoneme: String,
    pub prev_phoneme: String,
    pub next_phoneme: String,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utterance_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment_label: Option<u8>,
}

/// Validated N×F feature matrix with one [`SegmentRecord`] per row.
///
/// Construction checks every invariant; after that the set is immutable.
/// Records are kept sorted so that `records()[i].row_index == i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    matrix: Array2<f32>,
    records: Vec<SegmentRecord>,
    inventory: PhonemeInventory,
    encoder_tag: String,
    layer_index: u32,
    metadata: BTreeMap<String, serde_json::Value>,
}

impl FeatureSet {
    pub fn new(
        matrix: Array2<f32>,
        mut records: Vec<SegmentRecord>,
        inventory: PhonemeInventory,
        encoder_tag: impl Into<String>,
        layer_index: u32,
    ) -> Result<Self> {
        let (n, f) = matrix.dim();
        if f == 0 {
            return Err(Error::ShapeMismatch("feature dimension must be positive".into()));
        }
        if records.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} records for {} matrix rows",
                records.len(),
                n
            )));
        }
        let mut seen = vec![false; n];
        for rec in &records {
            if rec.row_index >= n || seen[rec.row_index] {
                return Err(Error::InvalidRecord(format!(
                    "row_index {} is out of range or repeated",
                    rec.row_index
                )));
            }
            seen[rec.row_index] = true;
        }
        records.sort_by_key(|r| r.row_index);

        for (row, values) in matrix.outer_iter().enumerate() {
            if let Some(col) = values.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue { row, col });
            }
        }

        let mut utt_scores: HashMap<&str, Option<f64>> = HashMap::new();
        for rec in &records {
            if !inventory.contains(&rec.phoneme) {
                return Err(Error::UnknownPhoneme(rec.phoneme.clone()));
            }
            for ctx in [&rec.prev_phoneme, &rec.next_phoneme] {
                if ctx != BOUNDARY && !inventory.contains(ctx) {
                    return Err(Error::UnknownPhoneme(ctx.clone()));
                }
            }
            if let Some(label) = rec.segment_label {
                if label > 1 {
                    return Err(Error::InvalidRecord(format!(
                        "segment_label must be 0 or 1, got {label}"
                    )));
                }
            }
            if let Some(s) = rec.utterance_score {
                if !s.is_finite() {
                    return Err(Error::InvalidRecord(format!(
                        "non-finite utterance_score for {:?}",
                        rec.utterance_id
                    )));
                }
            }
            match utt_scores.get(rec.utterance_id.as_str()) {
                Some(prev) if *prev != rec.utterance_score => {
                    return Err(Error::InvalidRecord(format!(
                        "utterance {:?} has inconsistent utterance_score",
                        rec.utterance_id
                    )));
                }
                Some(_) => {}
                None => {
                    utt_scores.insert(&rec.utterance_id, rec.utterance_score);
                }
            }
        }

        Ok(Self {
            matrix,
            records,
            inventory,
            encoder_tag: encoder_tag.into(),
            layer_index,
            metadata: BTreeMap::new(),
        })
    }

    pub fn with_metadata(mut self, metadata: BTreeMap<String, serde_json::Value>) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn n_rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &Array2<f32> {
        &self.matrix
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f32> {
        self.matrix.row(i)
    }

    /// Row `i` widened to f64.
    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.matrix.row(i).iter().map(|&v| v as f64).collect()
    }

    pub fn records(&self) -> &[SegmentRecord] {
        &self.records
    }

    pub fn inventory(&self) -> &PhonemeInventory {
        &self.inventory
    }

    pub fn encoder_tag(&self) -> &str {
        &self.encoder_tag
    }

    pub fn layer_index(&self) -> u32 {
        self.layer_index
    }

    pub fn metadata(&self) -> &BTreeMap<String, serde_json::Value> {
        &self.metadata
    }

    /// Rows of one split, in row order.
    pub fn split_rows(&self, split: Split) -> Vec<usize> {
        self.records
            .iter()
            .filter(|r| r.split == split)
            .map(|r| r.row_index)
            .collect()
    }

    /// Gathers the given rows into a dense f64 matrix.
    pub fn gather_f64(&self, rows: &[usize]) -> Array2<f64> {
        self.matrix.select(Axis(0), rows).mapv(|v| v as f64)
    }

    /// A new set containing only `rows` (in the given order), re-indexed from 0.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureSet {
        let matrix = self.matrix.select(Axis(0), rows);
        let records = rows
            .iter()
            .enumerate()
            .map(|(new_idx, &old)| SegmentRecord {
                row_index: new_idx,
                ..self.records[old].clone()
            })
            .collect();
        FeatureSet {
            matrix,
            records,
            inventory: self.inventory.clone(),
            encoder_tag: self.encoder_tag.clone(),
            layer_index: self.layer_index,
            metadata: self.metadata.clone(),
        }
    }
}

/// Row indices of `split`, grouped by phoneme.
pub fn group_by_phoneme(fs: &FeatureSet, split: Split) -> BTreeMap<String, Vec<usize>> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for rec in fs.records().iter().filter(|r| r.split == split) {
        groups
            .entry(rec.phoneme.clone())
            .or_default()
            .push(rec.row_index);
    }
    groups
}

/// Caps the number of training rows per phoneme at `max_per_phoneme`.
///
/// Rows are drawn uniformly without replacement; phonemes at or under the
/// cap keep all rows. Test rows are never touched. Surviving rows keep their
/// relative order.
pub fn subsample_per_phoneme(
    fs: &FeatureSet,
    max_per_phoneme: usize,
    seed: u64,
) -> Result<FeatureSet> {
    if max_per_phoneme == 0 {
        return Err(Error::InvalidConfig("max_per_phoneme must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![true; fs.n_rows()];
    for rows in group_by_phoneme(fs, Split::Train).values() {
        if rows.len() <= max_per_phoneme {
            continue;
        }
        for &r in rows {
            keep[r] = false;
        }
        for pick in rand::seq::index::sample(&mut rng, rows.len(), max_per_phoneme) {
            keep[rows[pick]] = true;
        }
    }
    if keep.iter().all(|&k| k) {
        return Ok(fs.clone());
    }
    let rows: Vec<usize> = (0..fs.n_rows()).filter(|&i| keep[i]).collect();
    Ok(fs.select_rows(&rows))
}
