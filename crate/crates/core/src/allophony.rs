//! Allophonic structure: per-phoneme k-means clusters against the
//! natural-class environment of each segment, summarized as
//! `ANMI = MI(I; E) / H(E)`.

use std::collections::BTreeMap;

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::features::{group_by_phoneme, FeatureSet, PhonemeInventory, SegmentRecord, Split, BOUNDARY};
use crate::kmeans::kmeans_init;

/// Natural classes of the neighbouring phonemes, `"#"` at a word boundary.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EnvironmentLabel {
    pub prev_class: String,
    pub next_class: String,
}

fn class_of(symbol: &str, inventory: &PhonemeInventory) -> Result<String> {
    if symbol == BOUNDARY {
        return Ok(BOUNDARY.to_string());
    }
    inventory
        .natural_class(symbol)
        .map(str::to_string)
        .ok_or_else(|| Error::UnknownSymbol(symbol.to_string()))
}

pub fn encode_environment(
    rec: &SegmentRecord,
    inventory: &PhonemeInventory,
) -> Result<EnvironmentLabel> {
    Ok(EnvironmentLabel {
        prev_class: class_of(&rec.prev_phoneme, inventory)?,
        next_class: class_of(&rec.next_phoneme, inventory)?,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub phoneme: String,
    pub row_index: usize,
    pub cluster_index: usize,
}

/// k-means over one phoneme's rows. `x` holds the rows listed in
/// `row_indices`, in that order. `k` shrinks to the row count.
pub fn cluster_phoneme(
    phoneme: &str,
    row_indices: &[usize],
    x: ArrayView2<'_, f64>,
    k: usize,
    seed: u64,
) -> Result<Vec<ClusterAssignment>> {
    check_dim(row_indices.len(), x.nrows())?;
    if row_indices.is_empty() {
        return Ok(Vec::new());
    }
    if k == 0 {
        return Err(Error::InvalidConfig("cluster count must be positive".into()));
    }
    let k = k.min(x.nrows());
    let km = kmeans_init(x, k, seed)?;
    Ok(row_indices
        .iter()
        .zip(km.assignments)
        .map(|(&row_index, cluster_index)| ClusterAssignment {
            phoneme: phoneme.to_string(),
            row_index,
            cluster_index,
        })
        .collect())
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// `(c / n) · ln(n·c_xy / (c_x·c_y))` with the ratio reduced in integers
/// before conversion, so equal count patterns give bit-equal terms.
fn mi_term(n: u64, c_xy: u64, c_x: u64, c_y: u64) -> f64 {
    let num = n as u128 * c_xy as u128;
    let den = c_x as u128 * c_y as u128;
    let g = gcd(num, den);
    (c_xy as f64 / n as f64) * ((num / g) as f64 / (den / g) as f64).ln()
}

/// Order-independent sum: terms are added in sorted order.
fn sorted_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.into_iter().sum()
}

fn counts<T: Ord>(labels: &[T]) -> BTreeMap<&T, u64> {
    let mut m = BTreeMap::new();
    for l in labels {
        *m.entry(l).or_insert(0) += 1;
    }
    m
}

/// Plug-in entropy in nats.
pub fn entropy<T: Ord>(labels: &[T]) -> f64 {
    let n = labels.len() as u64;
    sorted_sum(counts(labels).values().map(|&c| mi_term(n, c, c, c)).collect())
}

/// Plug-in mutual information in nats.
pub fn mutual_information<I: Ord, E: Ord>(clusters: &[I], envs: &[E]) -> Result<f64> {
    check_dim(clusters.len(), envs.len())?;
    let n = clusters.len() as u64;
    let ci = counts(clusters);
    let ce = counts(envs);
    let mut joint: BTreeMap<(&I, &E), u64> = BTreeMap::new();
    for pair in clusters.iter().zip(envs) {
        *joint.entry(pair).or_insert(0) += 1;
    }
    Ok(sorted_sum(
        joint
            .iter()
            .map(|(&(i, e), &c)| mi_term(n, c, ci[i], ce[e]))
            .collect(),
    ))
}

/// `MI(I; E) / H(E)` for one phoneme.
pub fn anmi<I: Ord, E: Ord>(clusters: &[I], envs: &[E]) -> Result<f64> {
    let mi = mutual_information(clusters, envs)?;
    let h = entropy(envs);
    if !(h > 0.0) {
        return Err(Error::DegenerateEnvironments);
    }
    let v = mi / h;
    debug_assert!((-1e-12..=1.0 + 1e-12).contains(&v), "ANMI {v} outside [0, 1]");
    Ok(v)
}

/// Which rows enter the analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnmiScope {
    /// The full training split (typical speech), ignoring any subsample cap.
    Train,
    /// Every row in the feature set.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnmiConfig {
    pub n_clusters: usize,
    pub seed: u64,
    pub scope: AnmiScope,
}

impl Default for AnmiConfig {
    fn default() -> Self {
        Self {
            n_clusters: 32,
            seed: 0,
            scope: AnmiScope::Train,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhonemeAnmi {
    pub phoneme: String,
    pub n: usize,
    pub n_clusters: usize,
    /// `None` when every segment of the phoneme shares one environment.
    pub anmi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnmiReport {
    pub encoder_tag: String,
    pub layer_index: u32,
    pub per_phoneme: Vec<PhonemeAnmi>,
    /// Segment-count-weighted mean over phonemes with a defined ANMI.
    pub pooled: f64,
    pub pooled_n: usize,
}

fn rows_in_scope(fs: &FeatureSet, scope: AnmiScope) -> BTreeMap<String, Vec<usize>> {
    match scope {
        AnmiScope::Train => group_by_phoneme(fs, Split::Train),
        AnmiScope::All => {
            let mut m: BTreeMap<String, Vec<usize>> = BTreeMap::new();
            for r in fs.records() {
                m.entry(r.phoneme.clone()).or_default().push(r.row_index);
            }
            m
        }
    }
}

/// Clusters each phoneme and computes per-phoneme and pooled ANMI.
pub fn analyze_allophony(fs: &FeatureSet, cfg: &AnmiConfig) -> Result<AnmiReport> {
    let groups: Vec<(String, Vec<usize>)> = rows_in_scope(fs, cfg.scope).into_iter().collect();
    let per_phoneme: Vec<PhonemeAnmi> = groups
        .into_par_iter()
        .map(|(phoneme, rows)| {
            let x = fs.gather_f64(&rows);
            let assignments = cluster_phoneme(&phoneme, &rows, x.view(), cfg.n_clusters, cfg.seed)?;
            let clusters: Vec<usize> = assignments.iter().map(|a| a.cluster_index).collect();
            let envs = rows
                .iter()
                .map(|&r| encode_environment(&fs.records()[r], fs.inventory()))
                .collect::<Result<Vec<_>>>()?;
            let value = match anmi(&clusters, &envs) {
                Ok(v) => Some(v),
                Err(Error::DegenerateEnvironments) => None,
                Err(e) => return Err(e),
            };
            Ok(PhonemeAnmi {
                phoneme,
                n: rows.len(),
                n_clusters: cfg.n_clusters.min(rows.len()),
                anmi: value,
            })
        })
        .collect::<Result<_>>()?;

    let (weighted, pooled_n) = per_phoneme
        .iter()
        .filter_map(|p| p.anmi.map(|a| (a * p.n as f64, p.n)))
        .fold((0.0, 0), |(s, n), (a, k)| (s + a, n + k));
    if pooled_n == 0 {
        return Err(Error::DegenerateEnvironments);
    }
    Ok(AnmiReport {
        encoder_tag: fs.encoder_tag().to_string(),
        layer_index: fs.layer_index(),
        per_phoneme,
        pooled: weighted / pooled_n as f64,
        pooled_n,
    })
}
