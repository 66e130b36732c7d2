//! Trained model sets on disk: one directory per model family with an
//! `index.json` naming the artifact of each phoneme.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mixgop_core::classifier::{classifier_score_all, read_classifier, write_classifier, LinearClassifier};
use mixgop_core::eval::ScoreTable;
use mixgop_core::features::{FeatureSet, Split};
use mixgop_core::gmm::{mixgop_score_all, read_gmm, write_gmm, GmmModel};
use mixgop_core::ood::knn::{knn_score_all, read_knn, write_knn};
use mixgop_core::ood::ocsvm::{ocsvm_score_all, read_ocsvm, write_ocsvm};
use mixgop_core::ood::{KnnIndex, OcsvmModels};
use serde::{Deserialize, Serialize};

use crate::config::Method;
use crate::error::CliError;
use crate::output::{stamp_artifact, write_json};

pub enum ModelSet {
    Gmm(BTreeMap<String, GmmModel>),
    Knn(BTreeMap<String, KnnIndex>),
    Osvm(OcsvmModels),
    Classifier(LinearClassifier),
}

#[derive(Debug, Serialize, Deserialize)]
pub struct IndexEntry {
    /// Empty for models that cover every phoneme.
    pub phoneme: String,
    pub file: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelIndex {
    pub family: String,
    pub entries: Vec<IndexEntry>,
}

pub fn family_dir(output_dir: &Path, method: Method) -> PathBuf {
    output_dir.join("models").join(method.model_family())
}

impl ModelSet {
    /// Writes every artifact plus the index; returns the files written.
    pub fn save(&self, dir: &Path, family: &str, hash: &str) -> Result<Vec<PathBuf>, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let mut entries = Vec::new();
        let mut put = |phoneme: &str, write: &dyn Fn(&Path) -> mixgop_core::Result<()>| -> Result<(), CliError> {
            let file = format!("{:03}.json", entries.len());
            let path = dir.join(&file);
            write(&path)?;
            stamp_artifact(&path, hash)?;
            entries.push(IndexEntry {
                phoneme: phoneme.to_string(),
                file,
            });
            Ok(())
        };
        match self {
            ModelSet::Gmm(models) => {
                for (p, m) in models {
                    put(p, &|path| write_gmm(m, path))?;
                }
            }
            ModelSet::Knn(indexes) => {
                for (p, idx) in indexes {
                    put(p, &|path| write_knn(idx, path))?;
                }
            }
            ModelSet::Osvm(OcsvmModels::Global(m)) => put("", &|path| write_ocsvm(m, path))?,
            ModelSet::Osvm(OcsvmModels::PerPhoneme(models)) => {
                for (p, m) in models {
                    put(p, &|path| write_ocsvm(m, path))?;
                }
            }
            ModelSet::Classifier(clf) => put("", &|path| write_classifier(clf, path))?,
        }
        let files = entries.iter().map(|e| dir.join(&e.file)).collect();
        let index = ModelIndex {
            family: family.to_string(),
            entries,
        };
        write_json(&dir.join("index.json"), hash, &index)?;
        Ok(files)
    }

    pub fn load(dir: &Path, method: Method) -> Result<Self, CliError> {
        let index_path = dir.join("index.json");
        if !index_path.exists() {
            return Err(mixgop_core::Error::MissingModel(format!(
                "{} models under {}",
                method.model_family(),
                dir.display()
            ))
            .into());
        }
        let text = std::fs::read_to_string(&index_path).map_err(|e| CliError::io(&index_path, e))?;
        let index: ModelIndex = serde_json::from_str(&text).map_err(|e| {
            CliError::Core(mixgop_core::Error::InvalidRecord(format!(
                "model index {}: {e}",
                index_path.display()
            )))
        })?;
        let path_of = |e: &IndexEntry| -> Result<PathBuf, CliError> {
            let p = dir.join(&e.file);
            if p.exists() {
                Ok(p)
            } else {
                Err(mixgop_core::Error::MissingModel(p.display().to_string()).into())
            }
        };
        let single = || -> Result<PathBuf, CliError> {
            match index.entries.as_slice() {
                [one] => path_of(one),
                _ => Err(mixgop_core::Error::InvalidRecord(format!(
                    "{} should list exactly one artifact",
                    index_path.display()
                ))
                .into()),
            }
        };
        Ok(match method.model_family() {
            "gmm" => ModelSet::Gmm(
                index
                    .entries
                    .iter()
                    .map(|e| Ok((e.phoneme.clone(), read_gmm(&path_of(e)?)?)))
                    .collect::<Result<_, CliError>>()?,
            ),
            "knn" => ModelSet::Knn(
                index
                    .entries
                    .iter()
                    .map(|e| Ok((e.phoneme.clone(), read_knn(&path_of(e)?)?)))
                    .collect::<Result<_, CliError>>()?,
            ),
            "osvm" => ModelSet::Osvm(OcsvmModels::Global(read_ocsvm(&single()?)?)),
            "p_osvm" => ModelSet::Osvm(OcsvmModels::PerPhoneme(
                index
                    .entries
                    .iter()
                    .map(|e| Ok((e.phoneme.clone(), read_ocsvm(&path_of(e)?)?)))
                    .collect::<Result<_, CliError>>()?,
            )),
            _ => ModelSet::Classifier(read_classifier(&single()?)?),
        })
    }

    /// Segment scores for `split`. Attention pooling reuses the MixGoP
    /// segment scores, so it scores like `mixgop`.
    pub fn score(&self, fs: &FeatureSet, split: Split, method: Method) -> Result<ScoreTable, CliError> {
        Ok(match self {
            ModelSet::Gmm(models) => mixgop_score_all(models, fs, split)?,
            ModelSet::Knn(indexes) => knn_score_all(indexes, fs, split)?,
            ModelSet::Osvm(models) => ocsvm_score_all(models, fs, split)?,
            ModelSet::Classifier(clf) => {
                let gop = method.gop_method().ok_or_else(|| {
                    CliError::Usage(format!("method {method} does not use the classifier"))
                })?;
                classifier_score_all(clf, fs, split, gop)?
            }
        })
    }
}
