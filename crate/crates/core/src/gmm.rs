//! Per-phoneme Gaussian mixture densities.
//!
//! A model is trained with k-means initialization followed by EM, and scores a
//! segment by its mixture log-likelihood. Lower scores mean the segment is
//! less typical for the phoneme. Each component keeps its Cholesky factor
//! `L` (with `Σ = L Lᵀ`) and log-determinant so that scoring never
//! re-factorizes.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::{read_artifact, write_artifact};
use crate::error::{check_dim, Error, Result};
use crate::eval::ScoreTable;
use crate::features::{group_by_phoneme, FeatureSet, Split};
use crate::kmeans::kmeans_init;
use crate::linalg::{cholesky, forward_solve, log_det_from_cholesky, logsumexp, lower_inverse};

/// Number of times the covariance ridge is multiplied by 10 before giving up.
const REG_RETRIES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceMode {
    Full,
    Diagonal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmTrainConfig {
    pub n_components: usize,
    pub covariance_mode: CovarianceMode,
    pub reg_covar: f64,
    pub max_em_iters: usize,
    /// Convergence threshold on the change in mean log-likelihood.
    pub tol: f64,
    pub kmeans_seed: u64,
}

impl Default for GmmTrainConfig {
    fn default() -> Self {
        Self {
            n_components: 32,
            covariance_mode: CovarianceMode::Full,
            reg_covar: 1e-6,
            max_em_iters: 100,
            tol: 1e-3,
            kmeans_seed: 0,
        }
    }
}

impl GmmTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_components == 0 {
            return Err(Error::InvalidConfig("n_components must be at least 1".into()));
        }
        if !(self.reg_covar > 0.0) {
            return Err(Error::InvalidConfig("reg_covar must be positive".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig("tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Covariances {
    /// One F×F matrix per component.
    Full(Vec<Array2<f64>>),
    /// C×F per-dimension variances.
    Diagonal(Array2<f64>),
}

#[derive(Debug, Clone, PartialEq)]
enum Factor {
    Full {
        chol: Array2<f64>,
        chol_inv: Array2<f64>,
    },
    Diagonal {
        std: Array1<f64>,
    },
}

impl Factor {
    fn from_cholesky(chol: Array2<f64>) -> Self {
        let chol_inv = lower_inverse(chol.view());
        Factor::Full { chol, chol_inv }
    }

    fn log_det(&self) -> f64 {
        match self {
            Factor::Full { chol, .. } => log_det_from_cholesky(chol.view()),
            Factor::Diagonal { std } => 2.0 * std.iter().map(|s| s.ln()).sum::<f64>(),
        }
    }

    fn mahalanobis_sq(&self, diff: ArrayView1<'_, f64>) -> f64 {
        match self {
            Factor::Full { chol, .. } => {
                let z = forward_solve(chol.view(), diff);
                z.dot(&z)
            }
            Factor::Diagonal { std } => diff
                .iter()
                .zip(std.iter())
                .map(|(d, s)| (d / s) * (d / s))
                .sum(),
        }
    }

    /// Squared Mahalanobis distance of every row of `diffs`.
    fn mahalanobis_sq_rows(&self, diffs: ArrayView2<'_, f64>) -> Array1<f64> {
        let z = match self {
            Factor::Full { chol_inv, .. } => diffs.dot(&chol_inv.t()),
            Factor::Diagonal { std } => &diffs / &std.view().insert_axis(Axis(0)),
        };
        z.map_axis(Axis(1), |r| r.dot(&r))
    }
}

/// Mixture density for one phoneme.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    phoneme: String,
    weights: Array1<f64>,
    means: Array2<f64>,
    covariances: Covariances,
    factors: Vec<Factor>,
    log_dets: Vec<f64>,
}

impl GmmModel {
    /// Builds a model from explicit parameters, factorizing every covariance.
    pub fn new(
        phoneme: impl Into<String>,
        weights: Array1<f64>,
        means: Array2<f64>,
        covariances: Covariances,
    ) -> Result<Self> {
        let (c, f) = means.dim();
        check_dim(c, weights.len())?;
        let factors = match &covariances {
            Covariances::Full(covs) => {
                check_dim(c, covs.len())?;
                covs.iter()
                    .enumerate()
                    .map(|(k, cov)| {
                        check_dim(f, cov.nrows())?;
                        check_dim(f, cov.ncols())?;
                        cholesky(cov.view()).map(Factor::from_cholesky).ok_or_else(|| {
                            Error::NumericalFailure(format!(
                                "covariance of component {k} is not positive definite"
                            ))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            Covariances::Diagonal(vars) => {
                check_dim(c, vars.nrows())?;
                check_dim(f, vars.ncols())?;
                if vars.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                    return Err(Error::NumericalFailure(
                        "diagonal variances must be positive".into(),
                    ));
                }
                vars.outer_iter()
                    .map(|v| Factor::Diagonal {
                        std: v.mapv(f64::sqrt),
                    })
                    .collect()
            }
        };
        Self::assemble(phoneme.into(), weights, means, covariances, factors)
    }

    fn assemble(
        phoneme: String,
        weights: Array1<f64>,
        means: Array2<f64>,
        covariances: Covariances,
        factors: Vec<Factor>,
    ) -> Result<Self> {
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::NumericalFailure("mixture weights must be non-negative".into()));
        }
        let total = weights.sum();
        if !(total > 0.0) {
            return Err(Error::NumericalFailure("mixture weights sum to zero".into()));
        }
        let weights = if (total - 1.0).abs() > 1e-12 {
            weights / total
        } else {
            weights
        };
        if means.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure("non-finite component mean".into()));
        }
        let log_dets = factors.iter().map(Factor::log_det).collect();
        Ok(Self {
            phoneme,
            weights,
            means,
            covariances,
            factors,
            log_dets,
        })
    }

    pub fn phoneme(&self) -> &str {
        &self.phoneme
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn mode(&self) -> CovarianceMode {
        match self.covariances {
            Covariances::Full(_) => CovarianceMode::Full,
            Covariances::Diagonal(_) => CovarianceMode::Diagonal,
        }
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn means(&self) -> &Array2<f64> {
        &self.means
    }

    pub fn covariances(&self) -> &Covariances {
        &self.covariances
    }

    /// Dense covariance of component `c`.
    pub fn covariance(&self, c: usize) -> Array2<f64> {
        match &self.covariances {
            Covariances::Full(covs) => covs[c].clone(),
            Covariances::Diagonal(vars) => Array2::from_diag(&vars.row(c)),
        }
    }

    /// Dense lower Cholesky factor of component `c`.
    pub fn cholesky_factor(&self, c: usize) -> Array2<f64> {
        match &self.factors[c] {
            Factor::Full { chol, .. } => chol.clone(),
            Factor::Diagonal { std } => Array2::from_diag(std),
        }
    }

    pub fn log_det(&self, c: usize) -> f64 {
        self.log_dets[c]
    }

    /// `(x−μ_c)ᵀ Σ_c⁻¹ (x−μ_c)` by triangular solve against the cached factor.
    pub fn mahalanobis_sq(&self, component: usize, x: &[f64]) -> Result<f64> {
        check_dim(self.feature_dim(), x.len())?;
        if component >= self.n_components() {
            return Err(Error::DimensionMismatch {
                expected: self.n_components(),
                got: component,
            });
        }
        let diff = ArrayView1::from(x).to_owned() - self.means.row(component);
        Ok(self.factors[component].mahalanobis_sq(diff.view()))
    }

    fn log_norm_const(&self, c: usize) -> f64 {
        -0.5 * (self.feature_dim() as f64 * (2.0 * PI).ln() + self.log_dets[c])
    }

    /// Mixture log-likelihood `log Σ_c π_c N(x | μ_c, Σ_c)`.
    pub fn log_likelihood(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.feature_dim(), x.len())?;
        let xv = ArrayView1::from(x);
        let terms: Vec<f64> = (0..self.n_components())
            .map(|c| {
                let diff = &xv - &self.means.row(c);
                let m = self.factors[c].mahalanobis_sq(diff.view());
                self.weights[c].ln() + self.log_norm_const(c) - 0.5 * m
            })
            .collect();
        Ok(logsumexp(&terms))
    }

    /// Per-row weighted component log-densities, N×C.
    fn weighted_log_prob(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros((x.nrows(), self.n_components()));
        for c in 0..self.n_components() {
            let diffs = &x - &self.means.row(c).insert_axis(Axis(0));
            let maha = self.factors[c].mahalanobis_sq_rows(diffs.view());
            let offset = self.weights[c].ln() + self.log_norm_const(c);
            out.column_mut(c).assign(&maha.mapv(|m| offset - 0.5 * m));
        }
        out
    }

    /// Log-likelihood of every row of `x`.
    pub fn log_likelihood_rows(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        check_dim(self.feature_dim(), x.ncols())?;
        let lp = self.weighted_log_prob(x);
        Ok(lp.map_axis(Axis(1), |r| logsumexp(r.as_slice().expect("row is contiguous"))))
    }
}

/// Result of [`fit_gmm`]: the model plus the EM trace.
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Mean training log-likelihood of the initial model and after every EM
    /// iteration; the last entry belongs to the returned model.
    pub log_likelihood_trace: Vec<f64>,
    pub em_iterations: usize,
    pub converged: bool,
    /// Components actually used after shrinking to the sample count.
    pub n_components: usize,
}

/// Fits a mixture to the rows of `x`: k-means labels give the initial
/// responsibilities, then EM runs until the mean log-likelihood moves by
/// less than `tol` or `max_em_iters` is reached.
pub fn fit_gmm(
    phoneme: &str,
    x: ArrayView2<'_, f64>,
    cfg: &GmmTrainConfig,
) -> Result<GmmFit> {
    cfg.validate()?;
    let n = x.nrows();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let c = cfg.n_components.min(n);
    if c < cfg.n_components {
        log::info!(
            "{phoneme}: shrinking mixture from {} to {c} components ({n} samples)",
            cfg.n_components
        );
    }

    let km = kmeans_init(x, c, cfg.kmeans_seed)?;
    let mut resp = Array2::<f64>::zeros((n, c));
    for (i, &a) in km.assignments.iter().enumerate() {
        resp[[i, a]] = 1.0;
    }

    let mut model = m_step(phoneme, x, resp.view(), cfg)?;
    let (mut ll, mut resp) = e_step(&model, x);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_em_iters {
        iterations += 1;
        model = m_step(phoneme, x, resp.view(), cfg)?;
        let (next_ll, next_resp) = e_step(&model, x);
        trace.push(next_ll);
        resp = next_resp;
        let change = next_ll - ll;
        ll = next_ll;
        if change.abs() < cfg.tol {
            converged = true;
            break;
        }
    }
    log::debug!("{phoneme}: EM stopped after {iterations} iterations (converged: {converged})");
    Ok(GmmFit {
        model,
        log_likelihood_trace: trace,
        em_iterations: iterations,
        converged,
        n_components: c,
    })
}

/// Mean log-likelihood and normalized responsibilities.
fn e_step(model: &GmmModel, x: ArrayView2<'_, f64>) -> (f64, Array2<f64>) {
    let mut lp = model.weighted_log_prob(x);
    let mut total = 0.0;
    for mut row in lp.outer_iter_mut() {
        let norm = logsumexp(row.as_slice().expect("row is contiguous"));
        total += norm;
        row.mapv_inplace(|v| (v - norm).exp());
    }
    (total / x.nrows() as f64, lp)
}

fn m_step(
    phoneme: &str,
    x: ArrayView2<'_, f64>,
    resp: ArrayView2<'_, f64>,
    cfg: &GmmTrainConfig,
) -> Result<GmmModel> {
    let (_, f) = x.dim();
    let c = resp.ncols();
    // same floor as scikit-learn, keeps empty components finite
    let nk = resp.sum_axis(Axis(0)) + 10.0 * f64::EPSILON;
    let means = resp.t().dot(&x) / &nk.view().insert_axis(Axis(1));
    let weights = &nk / nk.sum();

    match cfg.covariance_mode {
        CovarianceMode::Full => {
            let mut covs = Vec::with_capacity(c);
            let mut factors = Vec::with_capacity(c);
            for k in 0..c {
                let diff = &x - &means.row(k).insert_axis(Axis(0));
                let weighted = &diff * &resp.column(k).insert_axis(Axis(1));
                let scatter = weighted.t().dot(&diff) / nk[k];
                let (cov, chol) = regularized_cholesky(phoneme, k, &scatter, cfg.reg_covar)?;
                covs.push(cov);
                factors.push(Factor::from_cholesky(chol));
            }
            GmmModel::assemble(
                phoneme.to_string(),
                weights,
                means,
                Covariances::Full(covs),
                factors,
            )
        }
        CovarianceMode::Diagonal => {
            let mut vars = Array2::<f64>::zeros((c, f));
            for k in 0..c {
                let diff = &x - &means.row(k).insert_axis(Axis(0));
                let sq = (&diff * &diff) * &resp.column(k).insert_axis(Axis(1));
                let v = sq.sum_axis(Axis(0)) / nk[k] + cfg.reg_covar;
                vars.row_mut(k).assign(&v);
            }
            GmmModel::new(phoneme, weights, means, Covariances::Diagonal(vars))
        }
    }
}

/// Adds the ridge to the diagonal and factorizes, escalating the ridge
/// tenfold up to [`REG_RETRIES`] times.
fn regularized_cholesky(
    phoneme: &str,
    component: usize,
    scatter: &Array2<f64>,
    reg: f64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let sym = (scatter + &scatter.t()) * 0.5;
    let mut ridge = reg;
    for attempt in 0..=REG_RETRIES {
        let mut cov = sym.clone();
        cov.diag_mut().mapv_inplace(|d| d + ridge);
        if let Some(l) = cholesky(cov.view()) {
            if attempt > 0 {
                log::warn!("{phoneme}: component {component} needed ridge {ridge:e}");
            }
            return Ok((cov, l));
        }
        ridge *= 10.0;
    }
    Err(Error::NumericalFailure(format!(
        "{phoneme}: covariance of component {component} not positive definite even with ridge {:e}",
        ridge / 10.0
    )))
}

/// Fits one mixture per phoneme present in the training split, in parallel.
pub fn fit_per_phoneme(
    fs: &FeatureSet,
    cfg: &GmmTrainConfig,
) -> Result<BTreeMap<String, GmmFit>> {
    let groups: Vec<(String, Vec<usize>)> = group_by_phoneme(fs, Split::Train).into_iter().collect();
    groups
        .into_par_iter()
        .map(|(p, rows)| {
            let x = fs.gather_f64(&rows);
            fit_gmm(&p, x.view(), cfg).map(|fit| (p, fit))
        })
        .collect()
}

/// MixGoP score for every segment of `split`.
pub fn mixgop_score_all(
    models: &BTreeMap<String, GmmModel>,
    fs: &FeatureSet,
    split: Split,
) -> Result<ScoreTable> {
    let groups = group_by_phoneme(fs, split);
    for p in groups.keys() {
        if !models.contains_key(p) {
            return Err(Error::MissingModel(format!("phoneme {p:?}")));
        }
    }
    let per_group: Vec<(Vec<usize>, Array1<f64>)> = groups
        .into_par_iter()
        .map(|(p, rows)| {
            let x = fs.gather_f64(&rows);
            models[&p].log_likelihood_rows(x.view()).map(|s| (rows, s))
        })
        .collect::<Result<_>>()?;
    let mut scores = vec![f64::NAN; fs.n_rows()];
    for (rows, s) in per_group {
        for (r, v) in rows.into_iter().zip(s) {
            scores[r] = v;
        }
    }
    ScoreTable::from_split(fs, split, "mixgop", |row| scores[row])
}

#[derive(Debug, Serialize, Deserialize)]
struct GmmHeader {
    phoneme: String,
    n_components: usize,
    feature_dim: usize,
    covariance_mode: CovarianceMode,
    /// Blob layout, in order.
    layout: String,
}

const GMM_LAYOUT_FULL: &str = "weights[C], means[C*F], cholesky_lower_packed[C*F*(F+1)/2]";
const GMM_LAYOUT_DIAG: &str = "weights[C], means[C*F], std[C*F]";

/// Writes `model` as `<path>` (JSON header) plus a sibling f32 blob.
///
/// Covariances are stored through their Cholesky factors so that a model
/// read back in f32 precision is still positive definite.
pub fn write_gmm(model: &GmmModel, path: &Path) -> Result<()> {
    let mode = model.mode();
    let header = GmmHeader {
        phoneme: model.phoneme.clone(),
        n_components: model.n_components(),
        feature_dim: model.feature_dim(),
        covariance_mode: mode,
        layout: match mode {
            CovarianceMode::Full => GMM_LAYOUT_FULL,
            CovarianceMode::Diagonal => GMM_LAYOUT_DIAG,
        }
        .to_string(),
    };
    let mut values: Vec<f32> = model.weights.iter().map(|&v| v as f32).collect();
    values.extend(model.means.iter().map(|&v| v as f32));
    for factor in &model.factors {
        match factor {
            Factor::Full { chol, .. } => {
                for i in 0..chol.nrows() {
                    values.extend((0..=i).map(|j| chol[[i, j]] as f32));
                }
            }
            Factor::Diagonal { std } => values.extend(std.iter().map(|&v| v as f32)),
        }
    }
    write_artifact(path, "gmm", &header, values)
}

pub fn read_gmm(path: &Path) -> Result<GmmModel> {
    let (header, values) = read_artifact::<GmmHeader>(path, "gmm", |h| {
        let (c, f) = (h.n_components, h.feature_dim);
        let per = match h.covariance_mode {
            CovarianceMode::Full => f * (f + 1) / 2,
            CovarianceMode::Diagonal => f,
        };
        c + c * f + c * per
    })?;
    let (c, f) = (header.n_components, header.feature_dim);
    let mut it = values.into_iter().map(f64::from);
    let weights: Array1<f64> = it.by_ref().take(c).collect();
    let means = Array2::from_shape_vec((c, f), it.by_ref().take(c * f).collect())
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let bad = || Error::NumericalFailure(format!("{}: stored factor has a non-positive diagonal", path.display()));
    let (covariances, factors) = match header.covariance_mode {
        CovarianceMode::Full => {
            let mut covs = Vec::with_capacity(c);
            let mut factors = Vec::with_capacity(c);
            for _ in 0..c {
                let mut l = Array2::<f64>::zeros((f, f));
                for i in 0..f {
                    for j in 0..=i {
                        l[[i, j]] = it.next().expect("length checked");
                    }
                }
                if l.diag().iter().any(|&d| !(d > 0.0)) {
                    return Err(bad());
                }
                covs.push(l.dot(&l.t()));
                factors.push(Factor::from_cholesky(l));
            }
            (Covariances::Full(covs), factors)
        }
        CovarianceMode::Diagonal => {
            let std = Array2::from_shape_vec((c, f), it.collect())
                .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
            if std.iter().any(|&d| !(d > 0.0)) {
                return Err(bad());
            }
            let vars = std.mapv(|s| s * s);
            let factors = std
                .outer_iter()
                .map(|s| Factor::Diagonal { std: s.to_owned() })
                .collect();
            (Covariances::Diagonal(vars), factors)
        }
    };
    GmmModel::assemble(header.phoneme, weights, means, covariances, factors)
}
