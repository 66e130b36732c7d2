//! Segment score tables, utterance pooling and rank-correlation evaluation.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::features::{FeatureSet, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub utterance_id: String,
    pub phoneme: String,
    /// Position of the segment within its utterance.
    pub segment_index: usize,
    /// Row of the feature set the segment came from.
    pub row_index: usize,
    pub score: f64,
    pub method_tag: String,
}

/// Per-segment scores from one or more methods. Higher means more typical.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    entries: Vec<ScoreEntry>,
}

impl ScoreTable {
    pub fn new(entries: Vec<ScoreEntry>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !e.score.is_finite() {
                return Err(Error::DegenerateInput(format!(
                    "non-finite score for {:?} segment {}",
                    e.utterance_id, e.segment_index
                )));
            }
            if !seen.insert((e.utterance_id.as_str(), e.segment_index, e.method_tag.as_str())) {
                return Err(Error::DuplicateEntry(format!(
                    "{:?} segment {} method {}",
                    e.utterance_id, e.segment_index, e.method_tag
                )));
            }
        }
        Ok(Self { entries })
    }

    /// One entry per row of `split`, scored by `score(row_index)`.
    pub fn from_split(
        fs: &FeatureSet,
        split: Split,
        method_tag: &str,
        mut score: impl FnMut(usize) -> f64,
    ) -> Result<Self> {
        let mut positions: HashMap<&str, usize> = HashMap::new();
        let entries = fs
            .records()
            .iter()
            .filter(|r| r.split == split)
            .map(|r| {
                let pos = positions.entry(r.utterance_id.as_str()).or_insert(0);
                let segment_index = *pos;
                *pos += 1;
                ScoreEntry {
                    utterance_id: r.utterance_id.clone(),
                    phoneme: r.phoneme.clone(),
                    segment_index,
                    row_index: r.row_index,
                    score: score(r.row_index),
                    method_tag: method_tag.to_string(),
                }
            })
            .collect();
        Self::new(entries)
    }

    pub fn entries(&self) -> &[ScoreEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn method_tags(&self) -> Vec<&str> {
        let mut tags: Vec<&str> = self.entries.iter().map(|e| e.method_tag.as_str()).collect();
        tags.sort_unstable();
        tags.dedup();
        tags
    }

    /// Entries of a single method.
    pub fn for_method(&self, tag: &str) -> ScoreTable {
        ScoreTable {
            entries: self
                .entries
                .iter()
                .filter(|e| e.method_tag == tag)
                .cloned()
                .collect(),
        }
    }

    /// Applies `f` to every score.
    pub fn map_scores(&self, f: impl Fn(f64) -> f64) -> Result<ScoreTable> {
        ScoreTable::new(
            self.entries
                .iter()
                .map(|e| ScoreEntry {
                    score: f(e.score),
                    ..e.clone()
                })
                .collect(),
        )
    }

    /// Segments of each utterance as (phoneme, score), ordered by segment index.
    pub fn utterance_segments(&self) -> BTreeMap<String, Vec<(String, f64)>> {
        let mut grouped: BTreeMap<String, Vec<(usize, String, f64)>> = BTreeMap::new();
        for e in &self.entries {
            grouped
                .entry(e.utterance_id.clone())
                .or_default()
                .push((e.segment_index, e.phoneme.clone(), e.score));
        }
        grouped
            .into_iter()
            .map(|(u, mut segs)| {
                segs.sort_by_key(|s| s.0);
                (u, segs.into_iter().map(|(_, p, s)| (p, s)).collect())
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for e in &self.entries {
            w.serialize(e)
                .map_err(|err| Error::InvalidRecord(format!("writing scores: {err}")))?;
        }
        w.flush()
            .map_err(|err| Error::InvalidRecord(format!("writing scores: {err}")))
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let entries = r
            .deserialize()
            .collect::<std::result::Result<Vec<ScoreEntry>, _>>()
            .map_err(|err| Error::InvalidRecord(format!("reading scores: {err}")))?;
        Self::new(entries)
    }
}

/// Mean segment score per utterance.
///
/// Scores are summed in segment-index order, so the result does not depend
/// on the order of entries in the table.
pub fn pool_utterance(table: &ScoreTable) -> Result<BTreeMap<String, f64>> {
    table
        .utterance_segments()
        .into_iter()
        .map(|(u, segs)| {
            if segs.is_empty() {
                return Err(Error::EmptyUtterance(u));
            }
            let sum: f64 = segs.iter().map(|s| s.1).sum();
            Ok((u, sum / segs.len() as f64))
        })
        .collect()
}

fn pairs_choose_two(t: u64) -> u64 {
    t * t.saturating_sub(1) / 2
}

/// Sum of t(t-1)/2 over runs of equal adjacent values.
fn tied_pairs<T>(sorted: &[T], eq: impl Fn(&T, &T) -> bool) -> u64 {
    let mut total = 0;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if eq(&w[0], &w[1]) {
            run += 1;
        } else {
            total += pairs_choose_two(run);
            run = 1;
        }
    }
    if !sorted.is_empty() {
        total += pairs_choose_two(run);
    }
    total
}

/// Stable merge sort of `v` that returns the number of inversions
/// (pairs i < j with v[i] > v[j]).
fn merge_sort_inversions(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_sort_inversions(&mut v[..mid], &mut buf[..mid]);
    swaps += merge_sort_inversions(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + (mid - i)].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + (n - j)].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Kendall's tau-b, `(P − Q) / sqrt((P+Q+T_x)(P+Q+T_y))`, in O(n log n).
///
/// Fails with [`Error::DegenerateInput`] when either list is constant (the
/// coefficient is undefined) or holds non-finite values.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    check_dim(x.len(), y.len())?;
    let n = x.len();
    if n < 2 {
        return Err(Error::DegenerateInput("kendall tau needs at least 2 pairs".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::DegenerateInput("non-finite value in kendall tau input".into()));
    }
    // +0.0 folds -0.0 into 0.0 so total_cmp treats them as tied
    let mut pairs: Vec<(f64, f64)> = x.iter().zip(y).map(|(&a, &b)| (a + 0.0, b + 0.0)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let n0 = pairs_choose_two(n as u64);
    let n1 = tied_pairs(&pairs, |a, b| a.0 == b.0);
    let n3 = tied_pairs(&pairs, |a, b| a == b);

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_sort_inversions(&mut ys, &mut buf);
    let n2 = tied_pairs(&ys, |a, b| a == b);

    if n0 == n1 || n0 == n2 {
        return Err(Error::DegenerateInput(
            "kendall tau is undefined for a constant input".into(),
        ));
    }
    let numerator = n0 as i128 - n1 as i128 - n2 as i128 + n3 as i128 - 2 * swaps as i128;
    let denom = (((n0 - n1) as u128 * (n0 - n2) as u128) as f64).sqrt();
    Ok(numerator as f64 / denom)
}

/// Average ranks (1-based); ties share the mean of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalLevel {
    Utterance,
    Segment,
}

impl std::fmt::Display for EvalLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EvalLevel::Utterance => "utterance",
            EvalLevel::Segment => "segment",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method_tag: String,
    pub level: EvalLevel,
    pub kendall_tau: f64,
    pub abs_kendall_tau: f64,
    pub n: usize,
    pub dataset: String,
    pub encoder_tag: String,
    pub layer_index: u32,
}

/// Ground-truth utterance scores keyed by utterance id.
pub fn utterance_ground_truth(fs: &FeatureSet) -> HashMap<&str, f64> {
    fs.records()
        .iter()
        .filter_map(|r| r.utterance_score.map(|s| (r.utterance_id.as_str(), s)))
        .collect()
}

/// Pairs predictions with ground truth where both exist; returns the
/// predictions and truths in utterance-id order.
pub fn align_utterances(
    predictions: &BTreeMap<String, f64>,
    fs: &FeatureSet,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let truth = utterance_ground_truth(fs);
    let mut pred = Vec::new();
    let mut gt = Vec::new();
    for (u, &p) in predictions {
        if let Some(&t) = truth.get(u.as_str()) {
            pred.push(p);
            gt.push(t);
        }
    }
    if pred.is_empty() {
        return Err(Error::MissingGroundTruth("no scored utterance has an utterance_score".into()));
    }
    if pred.len() < predictions.len() {
        log::info!(
            "{} of {} utterances lack ground truth and were skipped",
            predictions.len() - pred.len(),
            predictions.len()
        );
    }
    Ok((pred, gt))
}

/// Correlates a single-method score table with the ground truth of `fs`.
///
/// At utterance level the table is pooled by [`pool_utterance`] and compared
/// with `utterance_score`; at segment level raw scores are compared with the
/// binary `segment_label`.
pub fn evaluate(table: &ScoreTable, fs: &FeatureSet, level: EvalLevel) -> Result<EvalReport> {
    let tags = table.method_tags();
    let method_tag = match tags.as_slice() {
        [one] => one.to_string(),
        [] => return Err(Error::DegenerateInput("empty score table".into())),
        _ => {
            return Err(Error::DegenerateInput(format!(
                "score table mixes methods {tags:?}; filter with for_method first"
            )))
        }
    };
    let (pred, gt) = match level {
        EvalLevel::Utterance => align_utterances(&pool_utterance(table)?, fs)?,
        EvalLevel::Segment => {
            let mut pred = Vec::new();
            let mut gt = Vec::new();
            for e in table.entries() {
                let label = fs
                    .records()
                    .get(e.row_index)
                    .filter(|r| r.utterance_id == e.utterance_id)
                    .and_then(|r| r.segment_label);
                if let Some(l) = label {
                    pred.push(e.score);
                    gt.push(l as f64);
                }
            }
            if pred.is_empty() {
                return Err(Error::MissingGroundTruth("no scored segment has a segment_label".into()));
            }
            (pred, gt)
        }
    };
    let tau = kendall_tau(&pred, &gt)?;
    Ok(EvalReport {
        method_tag,
        level,
        kendall_tau: tau,
        abs_kendall_tau: tau.abs(),
        n: pred.len(),
        dataset: fs
            .metadata()
            .get("dataset")
            .and_then(|v| v.as_str())
            .unwrap_or_default()
            .to_string(),
        encoder_tag: fs.encoder_tag().to_string(),
        layer_index: fs.layer_index(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::test_util::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// O(n²) pair counting.
    fn tau_b_oracle(x: &[f64], y: &[f64]) -> f64 {
        let (mut p, mut q, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
        for i in 0..x.len() {
            for j in (i + 1)..x.len() {
                let dx = x[i].partial_cmp(&x[j]).unwrap();
                let dy = y[i].partial_cmp(&y[j]).unwrap();
                match (dx, dy) {
                    (Ordering::Equal, Ordering::Equal) => {}
                    (Ordering::Equal, _) => tx += 1,
                    (_, Ordering::Equal) => ty += 1,
                    (a, b) if a == b => p += 1,
                    _ => q += 1,
                }
            }
        }
        (p - q) as f64 / (((p + q + tx) as f64) * ((p + q + ty) as f64)).sqrt()
    }

    #[test]
    fn perfect_orderings() {
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(kendall_tau(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::DegenerateInput(_))));
        assert!(matches!(kendall_tau(&[1.0], &[1.0]), Err(Error::DegenerateInput(_))));
        assert!(matches!(kendall_tau(&[1.0, 2.0], &[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(kendall_tau(&[1.0, f64::NAN], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn matches_quadratic_oracle_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let n = rng.gen_range(2..1000);
            let levels = rng.gen_range(2..20) as f64;
            let x: Vec<f64> = (0..n).map(|_| (rng.gen::<f64>() * levels).floor()).collect();
            let y: Vec<f64> = (0..n).map(|_| (rng.gen::<f64>() * levels).floor()).collect();
            let (Ok(got), want) = (kendall_tau(&x, &y), tau_b_oracle(&x, &y)) else {
                continue;
            };
            assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn signed_zero_is_a_tie() {
        let a = kendall_tau(&[0.0, -0.0, 1.0], &[1.0, 2.0, 3.0]).unwrap();
        let b = tau_b_oracle(&[0.0, 0.0, 1.0], &[1.0, 2.0, 3.0]);
        assert_eq!(a, b);
    }

    #[test]
    fn antisymmetric_and_monotone_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<f64> = (0..300).map(|_| rng.gen()).collect();
        let y: Vec<f64> = (0..300).map(|_| rng.gen()).collect();
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        let t = kendall_tau(&x, &y).unwrap();
        assert_eq!(kendall_tau(&x, &neg).unwrap(), -t);
        let warped: Vec<f64> = x.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
        assert_eq!(kendall_tau(&warped, &y).unwrap(), t);
    }

    fn entry(u: &str, i: usize, s: f64) -> ScoreEntry {
        ScoreEntry {
            utterance_id: u.into(),
            phoneme: "a".into(),
            segment_index: i,
            row_index: 0,
            score: s,
            method_tag: "m".into(),
        }
    }

    #[test]
    fn pooling() {
        let t = ScoreTable::new(vec![entry("u", 0, -1.0), entry("u", 1, -3.0), entry("v", 0, 4.5)]).unwrap();
        let p = pool_utterance(&t).unwrap();
        assert_eq!(p["u"], -2.0);
        assert_eq!(p["v"], 4.5);
    }

    #[test]
    fn pooling_matches_loop_oracle_and_ignores_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut entries = Vec::new();
        for u in 0..50 {
            for i in 0..rng.gen_range(1..12) {
                entries.push(entry(&format!("u{u}"), i, rng.gen_range(-10.0..0.0)));
            }
        }
        let table = ScoreTable::new(entries.clone()).unwrap();
        let pooled = pool_utterance(&table).unwrap();
        for u in 0..50 {
            let id = format!("u{u}");
            let mut sum = 0.0;
            let mut n = 0;
            for e in entries.iter().filter(|e| e.utterance_id == id) {
                sum += e.score;
                n += 1;
            }
            assert_eq!(pooled[&id], sum / n as f64);
        }
        entries.reverse();
        assert_eq!(pool_utterance(&ScoreTable::new(entries).unwrap()).unwrap(), pooled);
    }

    #[test]
    fn rejects_duplicates_and_nan() {
        assert!(ScoreTable::new(vec![entry("u", 0, 1.0), entry("u", 0, 2.0)]).is_err());
        assert!(ScoreTable::new(vec![entry("u", 0, f64::NAN)]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let t = ScoreTable::new(vec![entry("u", 0, -1.0 / 3.0), entry("v", 0, 1e-300)]).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(ScoreTable::read_csv(&buf[..]).unwrap(), t);
    }

    fn graded_set(n_utt: usize, per: usize) -> FeatureSet {
        let n = n_utt * per;
        let mut recs = Vec::new();
        for u in 0..n_utt {
            for s in 0..per {
                let mut r = record(u * per + s, &format!("u{u:03}"), "a", Split::Test);
                r.utterance_score = Some(u as f64);
                r.segment_label = Some((s % 2) as u8);
                recs.push(r);
            }
        }
        FeatureSet::new(Array2::zeros((n, 1)), recs, inventory(&["a"]), "enc", 2).unwrap()
    }

    #[test]
    fn evaluate_perfect_and_shift_invariant() {
        let fs = graded_set(10, 3);
        let t = ScoreTable::from_split(&fs, Split::Test, "m", |row| (row / 3) as f64).unwrap();
        let r = evaluate(&t, &fs, EvalLevel::Utterance).unwrap();
        assert_eq!(r.kendall_tau, 1.0);
        assert_eq!(r.n, 10);
        let shifted = t.map_scores(|s| s - 17.25).unwrap();
        assert_eq!(evaluate(&shifted, &fs, EvalLevel::Utterance).unwrap().kendall_tau, 1.0);

        let seg = ScoreTable::from_split(&fs, Split::Test, "m", |row| (row % 3 % 2) as f64).unwrap();
        let r = evaluate(&seg, &fs, EvalLevel::Segment).unwrap();
        assert_eq!(r.kendall_tau, 1.0);
        assert_eq!(r.n, 30);
    }

    #[test]
    fn evaluate_needs_ground_truth() {
        let fs = FeatureSet::new(
            Array2::zeros((2, 1)),
            vec![record(0, "u", "a", Split::Test), record(1, "v", "a", Split::Test)],
            inventory(&["a"]),
            "e",
            0,
        )
        .unwrap();
        let t = ScoreTable::from_split(&fs, Split::Test, "m", |r| r as f64).unwrap();
        assert!(matches!(evaluate(&t, &fs, EvalLevel::Utterance), Err(Error::MissingGroundTruth(_))));
        assert!(matches!(evaluate(&t, &fs, EvalLevel::Segment), Err(Error::MissingGroundTruth(_))));
    }

    #[test]
    fn random_labels_are_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x: Vec<f64> = (0..10_000).map(|_| rng.gen()).collect();
        let y: Vec<f64> = (0..10_000).map(|_| rng.gen_range(0..2) as f64).collect();
        assert!(kendall_tau(&x, &y).unwrap().abs() < 0.03);
    }

    #[test]
    fn average_ranks_share_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }
}
