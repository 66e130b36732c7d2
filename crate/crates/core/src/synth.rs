//! Synthetic feature sets with planted structure, for tests, benchmarks and
//! demonstrations.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{ScoreEntry, ScoreTable};
use crate::features::{FeatureSet, NaturalClassTable, PhonemeInventory, SegmentRecord, Split, BOUNDARY};

/// A diagonal-covariance Gaussian mixture to sample from.
#[derive(Debug, Clone)]
pub struct MixtureSpec {
    pub weights: Vec<f64>,
    pub means: Array2<f64>,
    pub stds: Array2<f64>,
}

impl MixtureSpec {
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> (Array2<f64>, Vec<usize>) {
        let f = self.means.ncols();
        let mut x = Array2::zeros((n, f));
        let mut labels = Vec::with_capacity(n);
        for mut row in x.outer_iter_mut() {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut c = self.weights.len() - 1;
            for (k, w) in self.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    c = k;
                    break;
                }
            }
            for j in 0..f {
                let z: f64 = StandardNormal.sample(rng);
                row[j] = self.means[[c, j]] + self.stds[[c, j]] * z;
            }
            labels.push(c);
        }
        (x, labels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedOodConfig {
    pub n_phonemes: usize,
    pub feature_dim: usize,
    pub components: usize,
    pub train_per_phoneme: usize,
    pub test_utterances: usize,
    pub segments_per_utterance: usize,
    /// Offset added to every coordinate of a mispronounced segment, in
    /// units of the within-component standard deviation.
    pub shift_sigmas: f64,
    pub seed: u64,
}

impl Default for PlantedOodConfig {
    fn default() -> Self {
        Self {
            n_phonemes: 10,
            feature_dim: 16,
            components: 3,
            train_per_phoneme: 300,
            test_utterances: 60,
            segments_per_utterance: 30,
            shift_sigmas: 3.0,
            seed: 0,
        }
    }
}

/// Phoneme mixtures with well separated centres and unit
/// within-component spread.
pub fn phoneme_mixtures(n_phonemes: usize, dim: usize, components: usize, rng: &mut impl Rng) -> Vec<MixtureSpec> {
    (0..n_phonemes)
        .map(|_| {
            let centre: Array1<f64> = (0..dim).map(|_| 10.0 * rng.sample::<f64, _>(StandardNormal)).collect();
            let means = Array2::from_shape_fn((components, dim), |(_, j)| {
                centre[j] + 2.0 * rng.sample::<f64, _>(StandardNormal)
            });
            let raw: Vec<f64> = (0..components).map(|_| rng.gen_range(1.0..2.0)).collect();
            let total: f64 = raw.iter().sum();
            MixtureSpec {
                weights: raw.iter().map(|w| w / total).collect(),
                means,
                stds: Array2::ones((components, dim)),
            }
        })
        .collect()
}

fn context(seq: &[String], i: usize) -> (String, String) {
    let prev = if i == 0 { BOUNDARY.to_string() } else { seq[i - 1].clone() };
    let next = seq.get(i + 1).cloned().unwrap_or_else(|| BOUNDARY.to_string());
    (prev, next)
}

/// Typical training speech for every phoneme, plus test utterances whose
/// planted severity `s` is the fraction of their segments drawn with a
/// mean shift. Test segments carry `segment_label = 1` when shifted and
/// `utterance_score = s`.
pub fn planted_ood(cfg: &PlantedOodConfig) -> Result<FeatureSet> {
    let table = NaturalClassTable::arpabet();
    let all: Vec<&str> = table.iter().map(|(s, _)| s).collect();
    if cfg.n_phonemes == 0 || cfg.n_phonemes > all.len() {
        return Err(Error::InvalidConfig(format!(
            "n_phonemes must lie in [1, {}]",
            all.len()
        )));
    }
    if cfg.feature_dim == 0 || cfg.components == 0 || cfg.train_per_phoneme == 0 {
        return Err(Error::InvalidConfig("synthetic sizes must be positive".into()));
    }
    let symbols: Vec<String> = all[..cfg.n_phonemes].iter().map(|s| s.to_string()).collect();
    let inventory = PhonemeInventory::from_table(&symbols, &table)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mixtures = phoneme_mixtures(cfg.n_phonemes, cfg.feature_dim, cfg.components, &mut rng);

    let mut rows: Vec<f64> = Vec::new();
    let mut records = Vec::new();
    let mut push = |x: &[f64], rec: SegmentRecord, rows: &mut Vec<f64>| {
        rows.extend_from_slice(x);
        records.push(rec);
    };

    // training: phoneme sequences chopped into utterances of 20 segments
    let mut train_seq: Vec<usize> = (0..cfg.n_phonemes)
        .flat_map(|p| std::iter::repeat_n(p, cfg.train_per_phoneme))
        .collect();
    train_seq.shuffle(&mut rng);
    for (u, chunk) in train_seq.chunks(20).enumerate() {
        let names: Vec<String> = chunk.iter().map(|&p| symbols[p].clone()).collect();
        for (i, &p) in chunk.iter().enumerate() {
            let (x, _) = mixtures[p].sample(1, &mut rng);
            let (prev, next) = context(&names, i);
            let rec = SegmentRecord {
                row_index: records_len(&rows, cfg.feature_dim),
                utterance_id: format!("train-{u:05}"),
                speaker_id: format!("typical-{}", u % 4),
                phoneme: names[i].clone(),
                prev_phoneme: prev,
                next_phoneme: next,
                split: Split::Train,
                utterance_score: None,
                segment_label: None,
            };
            push(x.as_slice().expect("contiguous"), rec, &mut rows);
        }
    }

    let n_utt = cfg.test_utterances;
    let segs = cfg.segments_per_utterance.max(1);
    for u in 0..n_utt {
        let severity = (u as f64 + 0.5) / n_utt as f64;
        let n_shift = (severity * segs as f64).round() as usize;
        let mut shifted = vec![false; segs];
        shifted[..n_shift].iter_mut().for_each(|s| *s = true);
        shifted.shuffle(&mut rng);
        let phon: Vec<usize> = (0..segs).map(|_| rng.gen_range(0..cfg.n_phonemes)).collect();
        let names: Vec<String> = phon.iter().map(|&p| symbols[p].clone()).collect();
        for i in 0..segs {
            let (mut x, _) = mixtures[phon[i]].sample(1, &mut rng);
            if shifted[i] {
                x.mapv_inplace(|v| v + cfg.shift_sigmas);
            }
            let (prev, next) = context(&names, i);
            let rec = SegmentRecord {
                row_index: records_len(&rows, cfg.feature_dim),
                utterance_id: format!("test-{u:05}"),
                speaker_id: format!("atypical-{}", u % 6),
                phoneme: names[i].clone(),
                prev_phoneme: prev,
                next_phoneme: next,
                split: Split::Test,
                utterance_score: Some(severity),
                segment_label: Some(shifted[i] as u8),
            };
            push(x.as_slice().expect("contiguous"), rec, &mut rows);
        }
    }

    let n = rows.len() / cfg.feature_dim;
    let matrix = Array2::from_shape_vec((n, cfg.feature_dim), rows.into_iter().map(|v| v as f32).collect())
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let mut metadata = std::collections::BTreeMap::new();
    metadata.insert("dataset".to_string(), serde_json::json!("synthetic-planted-ood"));
    metadata.insert("seed".to_string(), serde_json::json!(cfg.seed));
    Ok(FeatureSet::new(matrix, records, inventory, "synthetic", 0)?.with_metadata(metadata))
}

/// Segment scores for attention pooling in which only the first of four
/// phonemes tracks the utterance truth; the others are uniform noise.
/// Every utterance has six segments and a truth drawn from `[0, 1)`.
pub fn planted_pooling_signal(n_utterances: usize, seed: u64) -> Result<(ScoreTable, FeatureSet)> {
    const SYMBOLS: [&str; 4] = ["AA", "EH", "IY", "OW"];
    let inventory = PhonemeInventory::from_table(&SYMBOLS, &NaturalClassTable::arpabet())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    let mut records = Vec::new();
    for u in 0..n_utterances {
        let truth: f64 = rng.gen_range(0.0..1.0);
        let utterance_id = format!("u{u:04}");
        for s in 0..6 {
            let p = SYMBOLS[s % 4];
            let score = if s % 4 == 0 {
                truth * 4.0 + rng.gen_range(-0.2..0.2)
            } else {
                rng.gen_range(-4.0..4.0)
            };
            let row_index = records.len();
            records.push(SegmentRecord {
                row_index,
                utterance_id: utterance_id.clone(),
                speaker_id: "s".into(),
                phoneme: p.into(),
                prev_phoneme: BOUNDARY.into(),
                next_phoneme: BOUNDARY.into(),
                split: Split::Test,
                utterance_score: Some(truth),
                segment_label: None,
            });
            entries.push(ScoreEntry {
                utterance_id: utterance_id.clone(),
                phoneme: p.into(),
                segment_index: s,
                row_index,
                score,
                method_tag: "mixgop".into(),
            });
        }
    }
    let fs = FeatureSet::new(Array2::zeros((records.len(), 1)), records, inventory, "synthetic", 0)?;
    Ok((ScoreTable::new(entries)?, fs))
}

fn records_len(rows: &[f64], dim: usize) -> usize {
    rows.len() / dim
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_set_has_expected_shape() {
        let cfg = PlantedOodConfig { train_per_phoneme: 50, test_utterances: 10, segments_per_utterance: 8, ..Default::default() };
        let fs = planted_ood(&cfg).unwrap();
        assert_eq!(fs.n_rows(), 10 * 50 + 10 * 8);
        assert_eq!(fs.feature_dim(), 16);
        assert_eq!(fs.split_rows(Split::Test).len(), 80);
        let again = planted_ood(&cfg).unwrap();
        assert_eq!(fs.matrix(), again.matrix());
        let shifted = fs.records().iter().filter(|r| r.segment_label == Some(1)).count();
        assert!(shifted > 0 && shifted < 80);
    }
}
