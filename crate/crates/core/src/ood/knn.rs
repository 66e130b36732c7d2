use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::{read_artifact, write_artifact};
use crate::error::{check_dim, Error, Result};
use crate::eval::ScoreTable;
use crate::features::{group_by_phoneme, FeatureSet, Split};

/// Exact nearest-neighbor index over one phoneme's training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnIndex {
    phoneme: String,
    train: Array2<f64>,
    k: usize,
}

/// `ceil(0.10 · n)`, at least 1.
pub fn default_k(n: usize) -> usize {
    n.div_ceil(10).max(1)
}

impl KnnIndex {
    pub fn new(phoneme: impl Into<String>, train: Array2<f64>) -> Result<Self> {
        let k = default_k(train.nrows());
        Self::with_k(phoneme, train, k)
    }

    pub fn with_k(phoneme: impl Into<String>, train: Array2<f64>, k: usize) -> Result<Self> {
        if train.nrows() == 0 {
            return Err(Error::TooFewSamples { needed: 1, got: 0 });
        }
        if k == 0 || k > train.nrows() {
            return Err(Error::InvalidConfig(format!(
                "k = {k} outside [1, {}]",
                train.nrows()
            )));
        }
        Ok(Self {
            phoneme: phoneme.into(),
            train,
            k,
        })
    }

    pub fn phoneme(&self) -> &str {
        &self.phoneme
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn train(&self) -> ArrayView2<'_, f64> {
        self.train.view()
    }

    /// Negated distance to the k-th nearest training row (the largest
    /// distance within the nearest k). Higher means more typical.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.train.ncols(), x.len())?;
        let mut d: Vec<f64> = self
            .train
            .outer_iter()
            .map(|row| {
                row.iter()
                    .zip(x)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        let (_, kth, _) = d.select_nth_unstable_by(self.k - 1, f64::total_cmp);
        Ok(-*kth)
    }
}

/// One index per phoneme of the training split.
pub fn build_knn_indexes(fs: &FeatureSet) -> Result<BTreeMap<String, KnnIndex>> {
    group_by_phoneme(fs, Split::Train)
        .into_iter()
        .map(|(p, rows)| {
            let train = fs.gather_f64(&rows);
            KnnIndex::new(p.clone(), train).map(|idx| (p, idx))
        })
        .collect()
}

pub fn knn_score_all(
    indexes: &BTreeMap<String, KnnIndex>,
    fs: &FeatureSet,
    split: Split,
) -> Result<ScoreTable> {
    let rows = fs.split_rows(split);
    let scores: Vec<(usize, f64)> = rows
        .par_iter()
        .map(|&r| {
            let p = &fs.records()[r].phoneme;
            let idx = indexes.get(p).ok_or_else(|| Error::MissingModel(format!("phoneme {p:?}")))?;
            idx.score(&fs.row_f64(r)).map(|s| (r, s))
        })
        .collect::<Result<_>>()?;
    let mut by_row = vec![f64::NAN; fs.n_rows()];
    for (r, s) in scores {
        by_row[r] = s;
    }
    ScoreTable::from_split(fs, split, "knn", |r| by_row[r])
}

#[derive(Debug, Serialize, Deserialize)]
struct KnnHeader {
    phoneme: String,
    n_rows: usize,
    feature_dim: usize,
    k: usize,
}

pub fn write_knn(index: &KnnIndex, path: &Path) -> Result<()> {
    let header = KnnHeader {
        phoneme: index.phoneme.clone(),
        n_rows: index.train.nrows(),
        feature_dim: index.train.ncols(),
        k: index.k,
    };
    write_artifact(path, "knn_index", &header, index.train.iter().map(|&v| v as f32))
}

pub fn read_knn(path: &Path) -> Result<KnnIndex> {
    let (h, values) =
        read_artifact::<KnnHeader>(path, "knn_index", |h| h.n_rows * h.feature_dim)?;
    let train = Array2::from_shape_vec(
        (h.n_rows, h.feature_dim),
        values.into_iter().map(f64::from).collect(),
    )
    .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    KnnIndex::with_k(h.phoneme, train, h.k)
}
