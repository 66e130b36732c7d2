//! One-class SVM with an RBF kernel, trained on its dual by SMO.
//!
//! The dual is `min ½ αᵀKα` subject to `0 ≤ α_i ≤ 1/(νN)` and `Σ α_i = 1`.
//! Kernel columns are computed on demand for the working pair only.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::{read_artifact, write_artifact};
use crate::error::{check_dim, Error, Result};
use crate::eval::ScoreTable;
use crate::features::{group_by_phoneme, FeatureSet, Split};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaMode {
    /// `1 / (F · Var(X))` over all entries of the training matrix.
    Scale,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcsvmConfig {
    pub nu: f64,
    pub gamma: GammaMode,
    /// KKT tolerance on the maximal violating pair, in the usual libsvm
    /// scaling where the box is `[0, 1]`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for OcsvmConfig {
    fn default() -> Self {
        Self {
            nu: 0.5,
            gamma: GammaMode::Scale,
            tol: 1e-3,
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SvmScope {
    Global,
    PerPhoneme(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OneClassSvmModel {
    pub support_vectors: Array2<f64>,
    pub dual_coefs: Vec<f64>,
    pub rho: f64,
    pub gamma: f64,
    pub nu: f64,
    pub scope: SvmScope,
}

#[inline]
fn rbf(gamma: f64, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let d2: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

impl OneClassSvmModel {
    /// Signed decision value `Σ α_i K(sv_i, x) − ρ`; positive means inlier.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.support_vectors.ncols(), x.len())?;
        let xv = ArrayView1::from(x);
        let s: f64 = self
            .support_vectors
            .outer_iter()
            .zip(&self.dual_coefs)
            .map(|(sv, a)| a * rbf(self.gamma, sv, xv))
            .sum();
        Ok(s - self.rho)
    }
}

#[derive(Debug, Clone)]
pub struct OcsvmFit {
    pub model: OneClassSvmModel,
    /// Dual variables for every training row.
    pub alpha: Vec<f64>,
    /// Decision value of every training row.
    pub train_decision: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn scale_gamma(x: ArrayView2<'_, f64>) -> Result<f64> {
    let n = x.len() as f64;
    let mean = x.sum() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(Error::DegenerateData("feature matrix has zero variance".into()));
    }
    Ok(1.0 / (x.ncols() as f64 * var))
}

fn kernel_column(x: ArrayView2<'_, f64>, gamma: f64, i: usize) -> Vec<f64> {
    let xi = x.row(i);
    x.outer_iter().map(|r| rbf(gamma, r, xi)).collect()
}

pub fn fit_ocsvm(x: ArrayView2<'_, f64>, cfg: &OcsvmConfig, scope: SvmScope) -> Result<OcsvmFit> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    if !(cfg.nu > 0.0 && cfg.nu <= 1.0) {
        return Err(Error::InvalidConfig(format!("nu = {} outside (0, 1]", cfg.nu)));
    }
    if x.outer_iter().all(|r| r == x.row(0)) {
        return Err(Error::DegenerateData("all training rows are identical".into()));
    }
    let gamma = match cfg.gamma {
        GammaMode::Scale => scale_gamma(x)?,
        GammaMode::Fixed(g) if g > 0.0 => g,
        GammaMode::Fixed(g) => return Err(Error::InvalidConfig(format!("gamma = {g} must be positive"))),
    };

    let upper = 1.0 / (cfg.nu * n as f64);
    // libsvm-style start: the first floor(νN) rows at the bound, remainder on the next
    let mut alpha = vec![0.0; n];
    let n_full = ((cfg.nu * n as f64).floor() as usize).min(n);
    for a in alpha.iter_mut().take(n_full) {
        *a = upper;
    }
    if n_full < n {
        alpha[n_full] = (1.0 - n_full as f64 * upper).max(0.0);
    }

    let mut grad = vec![0.0; n];
    for (i, &a) in alpha.iter().enumerate() {
        if a > 0.0 {
            for (g, k) in grad.iter_mut().zip(kernel_column(x, gamma, i)) {
                *g += a * k;
            }
        }
    }

    let tol = cfg.tol * upper;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iter {
        // i may grow (α_i < C) and has the smallest gradient,
        // j may shrink (α_j > 0) and has the largest
        let mut i = usize::MAX;
        let mut j = usize::MAX;
        let mut g_min = f64::INFINITY;
        let mut g_max = f64::NEG_INFINITY;
        for t in 0..n {
            if alpha[t] < upper && grad[t] < g_min {
                g_min = grad[t];
                i = t;
            }
            if alpha[t] > 0.0 && grad[t] > g_max {
                g_max = grad[t];
                j = t;
            }
        }
        if i == usize::MAX || j == usize::MAX || g_max - g_min < tol {
            converged = true;
            break;
        }
        iterations += 1;
        let ki = kernel_column(x, gamma, i);
        let kj = kernel_column(x, gamma, j);
        let quad = (ki[i] + kj[j] - 2.0 * ki[j]).max(1e-12);
        let mut delta = (g_max - g_min) / quad;
        delta = delta.min(upper - alpha[i]).min(alpha[j]);
        alpha[i] += delta;
        alpha[j] -= delta;
        if upper - alpha[i] < 1e-15 * upper {
            alpha[i] = upper;
        }
        if alpha[j] < 1e-15 * upper {
            alpha[j] = 0.0;
        }
        for t in 0..n {
            grad[t] += delta * (ki[t] - kj[t]);
        }
    }
    if !converged {
        log::warn!("one-class SVM stopped at the iteration cap ({})", cfg.max_iter);
    }

    let rho = compute_rho(&alpha, &grad, upper);
    let sv: Vec<usize> = (0..n).filter(|&t| alpha[t] > 1e-8 * upper.min(1.0)).collect();
    let model = OneClassSvmModel {
        support_vectors: x.select(Axis(0), &sv),
        dual_coefs: sv.iter().map(|&t| alpha[t]).collect(),
        rho,
        gamma,
        nu: cfg.nu,
        scope,
    };
    let train_decision = grad.iter().map(|g| g - rho).collect();
    Ok(OcsvmFit {
        model,
        alpha,
        train_decision,
        iterations,
        converged,
    })
}

/// Offset from the KKT conditions: mean gradient over free variables, or the
/// midpoint of the feasible interval when every variable sits on a bound.
fn compute_rho(alpha: &[f64], grad: &[f64], upper: f64) -> f64 {
    let mut free_sum = 0.0;
    let mut free_n = 0usize;
    let mut lb = f64::NEG_INFINITY;
    let mut ub = f64::INFINITY;
    for (&a, &g) in alpha.iter().zip(grad) {
        if a >= upper {
            lb = lb.max(g);
        } else if a <= 0.0 {
            ub = ub.min(g);
        } else {
            free_sum += g;
            free_n += 1;
        }
    }
    if free_n > 0 {
        free_sum / free_n as f64
    } else {
        (lb + ub) / 2.0
    }
}

/// Either one model over all phonemes or one per phoneme.
#[derive(Debug, Clone, PartialEq)]
pub enum OcsvmModels {
    Global(OneClassSvmModel),
    PerPhoneme(BTreeMap<String, OneClassSvmModel>),
}

impl OcsvmModels {
    pub fn tag(&self) -> &'static str {
        match self {
            OcsvmModels::Global(_) => "osvm",
            OcsvmModels::PerPhoneme(_) => "p_osvm",
        }
    }

    fn model_for(&self, phoneme: &str) -> Result<&OneClassSvmModel> {
        match self {
            OcsvmModels::Global(m) => Ok(m),
            OcsvmModels::PerPhoneme(map) => map
                .get(phoneme)
                .ok_or_else(|| Error::MissingModel(format!("phoneme {phoneme:?}"))),
        }
    }
}

pub fn fit_global_ocsvm(fs: &FeatureSet, cfg: &OcsvmConfig) -> Result<OcsvmFit> {
    let rows = fs.split_rows(Split::Train);
    let x = fs.gather_f64(&rows);
    fit_ocsvm(x.view(), cfg, SvmScope::Global)
}

pub fn fit_per_phoneme_ocsvm(
    fs: &FeatureSet,
    cfg: &OcsvmConfig,
) -> Result<BTreeMap<String, OcsvmFit>> {
    let groups: Vec<_> = group_by_phoneme(fs, Split::Train).into_iter().collect();
    groups
        .into_par_iter()
        .map(|(p, rows)| {
            let x = fs.gather_f64(&rows);
            fit_ocsvm(x.view(), cfg, SvmScope::PerPhoneme(p.clone())).map(|f| (p, f))
        })
        .collect()
}

pub fn ocsvm_score_all(models: &OcsvmModels, fs: &FeatureSet, split: Split) -> Result<ScoreTable> {
    let rows = fs.split_rows(split);
    let scores: Vec<(usize, f64)> = rows
        .par_iter()
        .map(|&r| {
            let m = models.model_for(&fs.records()[r].phoneme)?;
            m.score(&fs.row_f64(r)).map(|s| (r, s))
        })
        .collect::<Result<_>>()?;
    let mut by_row = vec![f64::NAN; fs.n_rows()];
    for (r, s) in scores {
        by_row[r] = s;
    }
    ScoreTable::from_split(fs, split, models.tag(), |r| by_row[r])
}

#[derive(Debug, Serialize, Deserialize)]
struct OcsvmHeader {
    scope: SvmScope,
    n_support: usize,
    feature_dim: usize,
    gamma: f64,
    nu: f64,
    rho: f64,
    layout: String,
}

pub fn write_ocsvm(model: &OneClassSvmModel, path: &Path) -> Result<()> {
    let header = OcsvmHeader {
        scope: model.scope.clone(),
        n_support: model.dual_coefs.len(),
        feature_dim: model.support_vectors.ncols(),
        gamma: model.gamma,
        nu: model.nu,
        rho: model.rho,
        layout: "dual_coefs[M], support_vectors[M*F]".into(),
    };
    let values = model
        .dual_coefs
        .iter()
        .chain(model.support_vectors.iter())
        .map(|&v| v as f32);
    write_artifact(path, "one_class_svm", &header, values)
}

pub fn read_ocsvm(path: &Path) -> Result<OneClassSvmModel> {
    let (h, values) = read_artifact::<OcsvmHeader>(path, "one_class_svm", |h| {
        h.n_support + h.n_support * h.feature_dim
    })?;
    let m = h.n_support;
    let support_vectors = Array2::from_shape_vec(
        (m, h.feature_dim),
        values[m..].iter().map(|&v| v as f64).collect(),
    )
    .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    Ok(OneClassSvmModel {
        support_vectors,
        dual_coefs: values[..m].iter().map(|&v| v as f64).collect(),
        rho: h.rho,
        gamma: h.gamma,
        nu: h.nu,
        scope: h.scope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::cholesky;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rng: &mut ChaCha8Rng, n: usize, f: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, f), |_| StandardNormal.sample(rng))
    }

    #[test]
    fn symmetric_pair_splits_evenly() {
        let x = array![[-1.0, 0.0], [1.0, 0.0]];
        let fit = fit_ocsvm(x.view(), &OcsvmConfig::default(), SvmScope::Global).unwrap();
        assert!((fit.alpha[0] - 0.5).abs() < 1e-12 && (fit.alpha[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn identical_rows_are_degenerate() {
        let x = array![[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]];
        assert!(matches!(
            fit_ocsvm(x.view(), &OcsvmConfig::default(), SvmScope::Global),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn nu_bounds_training_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..3 {
            let x = gaussian(&mut rng, 300, 3);
            let fit = fit_ocsvm(x.view(), &OcsvmConfig::default(), SvmScope::Global).unwrap();
            assert!(fit.converged);
            let frac = fit.train_decision.iter().filter(|&&d| d < 0.0).count() as f64 / 300.0;
            assert!(frac <= 0.5 + 0.05, "outlier fraction {frac}");
            let total: f64 = fit.alpha.iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
            // stored decision matches direct evaluation
            for t in (0..300).step_by(37) {
                let d = fit.model.score(x.row(t).as_slice().unwrap()).unwrap();
                assert!((d - fit.train_decision[t]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn single_support_vector_and_far_field() {
        let model = OneClassSvmModel {
            support_vectors: array![[1.0, 2.0]],
            dual_coefs: vec![1.0],
            rho: 0.3,
            gamma: 0.5,
            nu: 0.5,
            scope: SvmScope::Global,
        };
        assert_eq!(model.score(&[1.0, 2.0]).unwrap(), 1.0 - 0.3);
        assert_eq!(model.score(&[1e4, -1e4]).unwrap(), -0.3);
    }

    #[test]
    fn score_matches_kernel_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sv = gaussian(&mut rng, 15, 4);
        let coefs: Vec<f64> = (0..15).map(|_| rng.gen_range(0.0..0.2)).collect();
        let model = OneClassSvmModel { support_vectors: sv.clone(), dual_coefs: coefs.clone(), rho: 0.1, gamma: 0.7, nu: 0.5, scope: SvmScope::Global };
        for _ in 0..20 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mut s = 0.0;
            for (i, c) in coefs.iter().enumerate() {
                let mut d2 = 0.0;
                for j in 0..4 {
                    d2 += (sv[[i, j]] - x[j]).powi(2);
                }
                s += c * (-0.7 * d2).exp();
            }
            assert!((model.score(&x).unwrap() - (s - 0.1)).abs() < 1e-9);
        }
    }

    #[test]
    fn gram_is_psd_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let x = gaussian(&mut rng, 20, 3);
            let g = rng.gen_range(0.05..2.0);
            let mut k = Array2::<f64>::zeros((20, 20));
            for i in 0..20 {
                for j in 0..20 {
                    k[[i, j]] = rbf(g, x.row(i), x.row(j));
                    assert!(k[[i, j]] > 0.0 && k[[i, j]] <= 1.0);
                }
            }
            assert_eq!(k, k.t());
            // eigenvalues >= -1e-8  <=>  K + 1e-8 I admits a Cholesky factor
            let shifted = &k + &(Array2::<f64>::eye(20) * 1e-8);
            assert!(cholesky(shifted.view()).is_some());
        }
    }

    #[test]
    fn round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = gaussian(&mut rng, 40, 2);
        let model = fit_ocsvm(x.view(), &OcsvmConfig::default(), SvmScope::PerPhoneme("a".into())).unwrap().model;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("o.json");
        write_ocsvm(&model, &p).unwrap();
        let back = read_ocsvm(&p).unwrap();
        assert_eq!(back.scope, model.scope);
        assert_eq!(back.rho, model.rho);
        let q = [0.3, -0.1];
        assert!((back.score(&q).unwrap() - model.score(&q).unwrap()).abs() < 1e-6);
    }
}
