//! Linear softmax phoneme classifier over frozen features and the
//! classifier-based GoP formulations derived from its logits.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::artifact::{read_artifact, write_artifact};
use crate::error::{check_dim, Error, Result};
use crate::eval::ScoreTable;
use crate::features::{FeatureSet, Split};
use crate::linalg::logsumexp;
use crate::optim::{Adam, AdamConfig};

/// How a GoP score is read off the classifier logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GopMethod {
    /// Log posterior, `log softmax(z)[p]`.
    GmmGop,
    /// Margin to the best competitor, `z[p] − max_q z[q]`.
    NnGop,
    /// Prior-normalized posterior, `log softmax(z)[p] − log P(p)`.
    DnnGop,
    /// Raw logit `z[p]`.
    MaxLogitGop,
}

impl GopMethod {
    pub const ALL: [GopMethod; 4] = [
        GopMethod::GmmGop,
        GopMethod::NnGop,
        GopMethod::DnnGop,
        GopMethod::MaxLogitGop,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            GopMethod::GmmGop => "gmm_gop",
            GopMethod::NnGop => "nn_gop",
            GopMethod::DnnGop => "dnn_gop",
            GopMethod::MaxLogitGop => "maxlogit_gop",
        }
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = logsumexp(logits);
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// GoP of class `class` from a logit vector.
pub fn gop_from_logits(
    logits: &[f64],
    class: usize,
    priors: &[f64],
    method: GopMethod,
) -> Result<f64> {
    check_dim(logits.len(), priors.len())?;
    if class >= logits.len() {
        return Err(Error::DimensionMismatch {
            expected: logits.len(),
            got: class,
        });
    }
    let z = logits[class];
    Ok(match method {
        GopMethod::GmmGop => z - logsumexp(logits),
        GopMethod::NnGop => z - logits.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        GopMethod::DnnGop => {
            let prior = priors[class];
            if !(prior > 0.0) {
                return Err(Error::ZeroPrior(format!("class {class}")));
            }
            let v = priors.len() as f64;
            // a uniform prior is 1/|V|; ln|V| avoids the rounding in ln(1/|V|)
            let uniform = priors.iter().all(|&q| q == prior) && (prior * v - 1.0).abs() < 1e-12;
            let log_prior = if uniform { -v.ln() } else { prior.ln() };
            (z - logsumexp(logits)) - log_prior
        }
        GopMethod::MaxLogitGop => z,
    })
}

/// `W` (|V|×F, no bias) with empirical training priors.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    weights: Array2<f64>,
    priors: Array1<f64>,
    symbols: Vec<String>,
}

impl LinearClassifier {
    pub fn new(weights: Array2<f64>, priors: Array1<f64>, symbols: Vec<String>) -> Result<Self> {
        check_dim(weights.nrows(), priors.len())?;
        check_dim(weights.nrows(), symbols.len())?;
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NumericalFailure("non-finite classifier weight".into()));
        }
        if priors.iter().any(|&p| !(p >= 0.0)) || (priors.sum() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidRecord("priors must be non-negative and sum to 1".into()));
        }
        Ok(Self {
            weights,
            priors,
            symbols,
        })
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn priors(&self) -> &Array1<f64> {
        &self.priors
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.ncols()
    }

    fn class_of(&self, phoneme: &str) -> Result<usize> {
        self.symbols
            .iter()
            .position(|s| s == phoneme)
            .ok_or_else(|| Error::UnknownPhoneme(phoneme.to_string()))
    }

    /// `W · x`.
    pub fn logits(&self, x: &[f64]) -> Result<Array1<f64>> {
        check_dim(self.feature_dim(), x.len())?;
        Ok(self.weights.dot(&ArrayView1::from(x)))
    }

    pub fn gop_score(&self, x: &[f64], phoneme: &str, method: GopMethod) -> Result<f64> {
        let class = self.class_of(phoneme)?;
        let z = self.logits(x)?;
        gop_from_logits(z.as_slice().expect("contiguous"), class, self.priors.as_slice().expect("contiguous"), method)
            .map_err(|e| match e {
                Error::ZeroPrior(_) => Error::ZeroPrior(phoneme.to_string()),
                other => other,
            })
    }
}

#[derive(Debug, Clone)]
pub struct ClassifierFit {
    pub classifier: LinearClassifier,
    /// Mean cross-entropy before each Adam step, plus the final value.
    pub losses: Vec<f64>,
}

/// Mean cross-entropy and its gradient with respect to `W`.
fn loss_and_grad(
    w: ArrayView2<'_, f64>,
    x: ArrayView2<'_, f64>,
    labels: &[usize],
) -> (f64, Array2<f64>) {
    let n = x.nrows() as f64;
    let mut probs = x.dot(&w.t());
    let mut loss = 0.0;
    for (mut row, &y) in probs.outer_iter_mut().zip(labels) {
        let lse = logsumexp(row.as_slice().expect("contiguous"));
        loss += lse - row[y];
        row.mapv_inplace(|z| (z - lse).exp());
        row[y] -= 1.0;
    }
    let grad = probs.t().dot(&x) / n;
    (loss / n, grad)
}

/// Trains `W` by full-batch Adam on softmax cross-entropy over the training
/// split, starting from zeros.
pub fn train_classifier(fs: &FeatureSet, cfg: &AdamConfig) -> Result<ClassifierFit> {
    cfg.validate()?;
    let rows = fs.split_rows(Split::Train);
    if rows.is_empty() {
        return Err(Error::EmptyTrainSplit);
    }
    let inv = fs.inventory();
    let labels: Vec<usize> = rows
        .iter()
        .map(|&r| inv.index_of(&fs.records()[r].phoneme).expect("validated on load"))
        .collect();
    let x = fs.gather_f64(&rows);
    let v = inv.len();

    let mut counts = vec![0usize; v];
    for &l in &labels {
        counts[l] += 1;
    }
    let priors: Array1<f64> = counts.iter().map(|&c| c as f64 / labels.len() as f64).collect();

    let mut w = Array2::<f64>::zeros((v, fs.feature_dim()));
    let mut adam = Adam::new(cfg.clone(), w.len());
    let mut losses = Vec::with_capacity(cfg.max_iters + 1);
    for _ in 0..cfg.max_iters {
        let (loss, grad) = loss_and_grad(w.view(), x.view(), &labels);
        losses.push(loss);
        adam.step(
            w.as_slice_mut().expect("standard layout"),
            grad.as_slice().expect("standard layout"),
        );
    }
    losses.push(loss_and_grad(w.view(), x.view(), &labels).0);
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::NumericalFailure("classifier loss diverged".into()));
    }
    Ok(ClassifierFit {
        classifier: LinearClassifier::new(w, priors, inv.symbols().to_vec())?,
        losses,
    })
}

/// GoP for every segment of `split`, using one batched logit computation.
pub fn classifier_score_all(
    clf: &LinearClassifier,
    fs: &FeatureSet,
    split: Split,
    method: GopMethod,
) -> Result<ScoreTable> {
    check_dim(clf.feature_dim(), fs.feature_dim())?;
    let rows = fs.split_rows(split);
    let x = fs.gather_f64(&rows);
    let logits = x.dot(&clf.weights.t());
    let priors = clf.priors.as_slice().expect("contiguous");
    let mut scores = vec![f64::NAN; fs.n_rows()];
    for (&r, z) in rows.iter().zip(logits.axis_iter(Axis(0))) {
        let phoneme = &fs.records()[r].phoneme;
        let class = clf.class_of(phoneme)?;
        scores[r] = gop_from_logits(z.as_slice().expect("contiguous"), class, priors, method)
            .map_err(|e| match e {
                Error::ZeroPrior(_) => Error::ZeroPrior(phoneme.clone()),
                other => other,
            })?;
    }
    ScoreTable::from_split(fs, split, method.tag(), |r| scores[r])
}

#[derive(Debug, Serialize, Deserialize)]
struct ClassifierHeader {
    n_classes: usize,
    feature_dim: usize,
    inventory: Vec<String>,
    layout: String,
}

pub fn write_classifier(clf: &LinearClassifier, path: &Path) -> Result<()> {
    let header = ClassifierHeader {
        n_classes: clf.symbols.len(),
        feature_dim: clf.feature_dim(),
        inventory: clf.symbols.clone(),
        layout: "weights[V*F], priors[V]".into(),
    };
    let values = clf
        .weights
        .iter()
        .chain(clf.priors.iter())
        .map(|&v| v as f32);
    write_artifact(path, "linear_classifier", &header, values)
}

pub fn read_classifier(path: &Path) -> Result<LinearClassifier> {
    let (h, values) = read_artifact::<ClassifierHeader>(path, "linear_classifier", |h| {
        h.n_classes * h.feature_dim + h.n_classes
    })?;
    let split = h.n_classes * h.feature_dim;
    let weights = Array2::from_shape_vec(
        (h.n_classes, h.feature_dim),
        values[..split].iter().map(|&v| v as f64).collect(),
    )
    .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let priors: Array1<f64> = values[split..].iter().map(|&v| v as f64).collect();
    let total = priors.sum();
    LinearClassifier::new(weights, priors / total, h.inventory)
}
