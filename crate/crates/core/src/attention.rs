//! Phoneme-wise attention pooling of segment scores, trained to maximize a
//! soft Spearman correlation with utterance ground truth under k-fold
//! cross-validation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{average_ranks, kendall_tau, utterance_ground_truth, EvalLevel, EvalReport, ScoreTable};
use crate::features::FeatureSet;
use crate::optim::{Adam, AdamConfig};
use crate::softrank::{SoftRank, SoftRankConfig};

/// One learnable logit per vocabulary symbol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionModule {
    symbols: Vec<String>,
    logits: Vec<f64>,
}

impl AttentionModule {
    /// All logits zero, which makes pooling a plain mean.
    pub fn zeros(symbols: Vec<String>) -> Self {
        let logits = vec![0.0; symbols.len()];
        Self { symbols, logits }
    }

    pub fn from_logits(symbols: Vec<String>, logits: Vec<f64>) -> Result<Self> {
        crate::error::check_dim(symbols.len(), logits.len())?;
        if logits.iter().any(|w| !w.is_finite()) {
            return Err(Error::NumericalFailure("non-finite attention logit".into()));
        }
        Ok(Self { symbols, logits })
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    fn index_of(&self, phoneme: &str) -> Result<usize> {
        self.symbols
            .iter()
            .position(|s| s == phoneme)
            .ok_or_else(|| Error::UnknownPhoneme(phoneme.to_string()))
    }

    /// Unnormalized weights `exp(w[p_i] − max)` and their sum.
    fn exp_weights<S: AsRef<str>>(&self, phonemes: &[S]) -> Result<(Vec<f64>, f64)> {
        if phonemes.is_empty() {
            return Err(Error::DegenerateInput("attention over an empty utterance".into()));
        }
        let w = phonemes
            .iter()
            .map(|p| self.index_of(p.as_ref()).map(|i| self.logits[i]))
            .collect::<Result<Vec<_>>>()?;
        let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = w.iter().map(|x| (x - max).exp()).collect();
        let total = e.iter().sum();
        Ok((e, total))
    }

    /// Softmax over the per-position logits; repeated phonemes share a logit.
    pub fn attention_weights<S: AsRef<str>>(&self, phonemes: &[S]) -> Result<Vec<f64>> {
        let (e, total) = self.exp_weights(phonemes)?;
        Ok(e.into_iter().map(|x| x / total).collect())
    }

    /// Attention-weighted utterance score `Σ α_i s_i`.
    ///
    /// Computed as `Σ e_i s_i / Σ e_i`; with equal logits every `e_i` is 1, so
    /// the result is bit-identical to the plain mean.
    pub fn mixgop_attn(&self, segments: &[(String, f64)]) -> Result<f64> {
        let phonemes: Vec<&str> = segments.iter().map(|s| s.0.as_str()).collect();
        let (e, total) = self.exp_weights(&phonemes)?;
        let num: f64 = e.iter().zip(segments).map(|(w, s)| w * s.1).sum();
        Ok(num / total)
    }

    /// Softmax of the logits over the whole vocabulary.
    pub fn phoneme_weights(&self) -> Vec<f64> {
        crate::classifier::softmax(&self.logits)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttentionConfig {
    pub folds: usize,
    pub seed: u64,
    pub soft_rank: SoftRankConfig,
    pub adam: AdamConfig,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            seed: 0,
            soft_rank: SoftRankConfig::default(),
            adam: AdamConfig {
                lr: 1e-2,
                max_iters: 200,
                ..AdamConfig::default()
            },
        }
    }
}

/// An utterance as vocabulary indices and segment scores, plus its truth.
#[derive(Debug, Clone)]
struct Utterance {
    classes: Vec<usize>,
    scores: Vec<f64>,
    truth: f64,
}

/// Pooled score and its gradient with respect to every logit.
fn pooled_with_grad(logits: &[f64], u: &Utterance, grad: &mut [f64]) -> f64 {
    let max = u.classes.iter().map(|&c| logits[c]).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = u.classes.iter().map(|&c| (logits[c] - max).exp()).collect();
    let total: f64 = e.iter().sum();
    let pooled = e.iter().zip(&u.scores).map(|(w, s)| w * s).sum::<f64>() / total;
    for ((&c, w), s) in u.classes.iter().zip(&e).zip(&u.scores) {
        grad[c] += w / total * (s - pooled);
    }
    pooled
}

/// Pearson correlation between the soft ranks of the pooled scores and the
/// hard ranks of the truth, with its gradient with respect to the logits.
fn soft_spearman(
    logits: &[f64],
    data: &[&Utterance],
    truth_ranks: &[f64],
    cfg: &SoftRankConfig,
) -> Result<(f64, Vec<f64>)> {
    let v = logits.len();
    let mut pooled_grads = Vec::with_capacity(data.len());
    let pooled: Vec<f64> = data
        .iter()
        .map(|u| {
            let mut g = vec![0.0; v];
            let p = pooled_with_grad(logits, u, &mut g);
            pooled_grads.push(g);
            p
        })
        .collect();
    let sr = SoftRank::new(&pooled, cfg)?;
    let r = &sr.ranks;
    let n = r.len() as f64;
    let mr = r.iter().sum::<f64>() / n;
    let mg = truth_ranks.iter().sum::<f64>() / n;
    let rc: Vec<f64> = r.iter().map(|x| x - mr).collect();
    let gc: Vec<f64> = truth_ranks.iter().map(|x| x - mg).collect();
    let nr = rc.iter().map(|x| x * x).sum::<f64>().sqrt();
    let ng = gc.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nr == 0.0 || ng == 0.0 {
        return Ok((0.0, vec![0.0; v]));
    }
    let rho = rc.iter().zip(&gc).map(|(a, b)| a * b).sum::<f64>() / (nr * ng);
    let d_rank: Vec<f64> = rc
        .iter()
        .zip(&gc)
        .map(|(a, b)| b / (nr * ng) - rho * a / (nr * nr))
        .collect();
    let d_pooled = sr.vjp(&d_rank);
    let mut grad = vec![0.0; v];
    for (dp, pg) in d_pooled.iter().zip(&pooled_grads) {
        for (g, x) in grad.iter_mut().zip(pg) {
            *g += dp * x;
        }
    }
    Ok((rho, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// +1 when training maximizes the correlation, −1 when it minimizes it,
    /// chosen from the sign at initialization.
    pub direction: f64,
    /// Soft Spearman on the training fold, before and after each step.
    pub objective_trace: Vec<f64>,
    /// Held-out tau with uniform pooling; `None` if undefined on the fold.
    pub pre_tau: Option<f64>,
    pub post_tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionReport {
    pub folds: Vec<FoldResult>,
    /// Tau of uniform pooling over all held-out utterances.
    pub pre: EvalReport,
    /// Tau of attention pooling, each utterance scored by the model of the
    /// fold that held it out.
    pub post: EvalReport,
    /// Vocabulary softmax of the logits, averaged over folds.
    pub phoneme_weights: Vec<(String, f64)>,
    /// Folds are drawn from the scored split itself, so these numbers are
    /// not comparable with plain held-out evaluation.
    pub comparable_with_standard_protocol: bool,
}

fn tau_or_none(pred: &[f64], truth: &[f64]) -> Result<Option<f64>> {
    match kendall_tau(pred, truth) {
        Ok(t) => Ok(Some(t)),
        Err(Error::DegenerateInput(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn collect_utterances(table: &ScoreTable, fs: &FeatureSet) -> Result<Vec<Utterance>> {
    let truth = utterance_ground_truth(fs);
    let symbols = fs.inventory();
    let mut out = Vec::new();
    for (id, segs) in table.utterance_segments() {
        let Some(&t) = truth.get(id.as_str()) else {
            continue;
        };
        let classes = segs
            .iter()
            .map(|(p, _)| symbols.index_of(p).ok_or_else(|| Error::UnknownPhoneme(p.clone())))
            .collect::<Result<Vec<_>>>()?;
        out.push(Utterance {
            classes,
            scores: segs.iter().map(|s| s.1).collect(),
            truth: t,
        });
    }
    Ok(out)
}

fn train_fold(
    symbols: &[String],
    train: &[&Utterance],
    cfg: &AttentionConfig,
) -> Result<(AttentionModule, f64, Vec<f64>)> {
    let truths: Vec<f64> = train.iter().map(|u| u.truth).collect();
    let truth_ranks = average_ranks(&truths);
    let mut logits = vec![0.0; symbols.len()];
    let (rho0, _) = soft_spearman(&logits, train, &truth_ranks, &cfg.soft_rank)?;
    let direction = if rho0 < 0.0 { -1.0 } else { 1.0 };
    let mut adam = Adam::new(cfg.adam.clone(), logits.len());
    let mut trace = Vec::with_capacity(cfg.adam.max_iters + 1);
    for _ in 0..cfg.adam.max_iters {
        let (rho, grad) = soft_spearman(&logits, train, &truth_ranks, &cfg.soft_rank)?;
        trace.push(rho);
        let loss_grad: Vec<f64> = grad.iter().map(|g| -direction * g).collect();
        adam.step(&mut logits, &loss_grad);
    }
    trace.push(soft_spearman(&logits, train, &truth_ranks, &cfg.soft_rank)?.0);
    Ok((AttentionModule::from_logits(symbols.to_vec(), logits)?, direction, trace))
}

/// Trained module, its summary, and `(utterance, uniform, attention)`
/// predictions for the held-out utterances.
type FoldFit = (AttentionModule, FoldResult, Vec<(usize, f64, f64)>);

/// k-fold cross-validated attention training over the utterances of a
/// single-method segment score table. Returns one module per fold.
pub fn train_attention(
    table: &ScoreTable,
    fs: &FeatureSet,
    cfg: &AttentionConfig,
) -> Result<(Vec<AttentionModule>, AttentionReport)> {
    cfg.adam.validate()?;
    cfg.soft_rank.validate()?;
    if cfg.folds < 2 {
        return Err(Error::InvalidConfig("attention training needs at least 2 folds".into()));
    }
    let base_tag = match table.method_tags().as_slice() {
        [one] => one.to_string(),
        tags => {
            return Err(Error::DegenerateInput(format!(
                "attention needs a single-method score table, got {tags:?}"
            )))
        }
    };
    let utterances = collect_utterances(table, fs)?;
    if utterances.len() < cfg.folds {
        return Err(Error::TooFewUtterances {
            needed: cfg.folds,
            got: utterances.len(),
        });
    }

    let mut order: Vec<usize> = (0..utterances.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let n = order.len();
    let fold_of = |pos: usize| pos * cfg.folds / n;
    let mut assignment = vec![0; n];
    for (pos, &u) in order.iter().enumerate() {
        assignment[u] = fold_of(pos);
    }

    let symbols = fs.inventory().symbols().to_vec();
    let fits: Vec<FoldFit> = (0..cfg.folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<&Utterance> = (0..n).filter(|&u| assignment[u] != f).map(|u| &utterances[u]).collect();
            let test: Vec<usize> = (0..n).filter(|&u| assignment[u] == f).collect();
            let (module, direction, trace) = train_fold(&symbols, &train, cfg)?;
            let uniform = AttentionModule::zeros(symbols.clone());
            let mut held_out = Vec::with_capacity(test.len());
            for &u in &test {
                let segs: Vec<(String, f64)> = utterances[u]
                    .classes
                    .iter()
                    .zip(&utterances[u].scores)
                    .map(|(&c, &s)| (symbols[c].clone(), s))
                    .collect();
                held_out.push((u, uniform.mixgop_attn(&segs)?, module.mixgop_attn(&segs)?));
            }
            let truth: Vec<f64> = test.iter().map(|&u| utterances[u].truth).collect();
            let pre: Vec<f64> = held_out.iter().map(|h| h.1).collect();
            let post: Vec<f64> = held_out.iter().map(|h| h.2).collect();
            let result = FoldResult {
                fold: f,
                n_train: train.len(),
                n_test: test.len(),
                direction,
                objective_trace: trace,
                pre_tau: tau_or_none(&pre, &truth)?,
                post_tau: tau_or_none(&post, &truth)?,
            };
            Ok((module, result, held_out))
        })
        .collect::<Result<_>>()?;

    let mut pre = vec![0.0; n];
    let mut post = vec![0.0; n];
    for (_, _, held_out) in &fits {
        for &(u, a, b) in held_out {
            pre[u] = a;
            post[u] = b;
        }
    }
    let truth: Vec<f64> = utterances.iter().map(|u| u.truth).collect();
    let report = |tag: &str, pred: &[f64]| -> Result<EvalReport> {
        let tau = kendall_tau(pred, &truth)?;
        Ok(EvalReport {
            method_tag: tag.to_string(),
            level: EvalLevel::Utterance,
            kendall_tau: tau,
            abs_kendall_tau: tau.abs(),
            n,
            dataset: fs
                .metadata()
                .get("dataset")
                .and_then(|v| v.as_str())
                .unwrap_or_default()
                .to_string(),
            encoder_tag: fs.encoder_tag().to_string(),
            layer_index: fs.layer_index(),
        })
    };
    let pre_report = report(&base_tag, &pre)?;
    let post_report = report(&format!("{base_tag}_attn"), &post)?;

    let mut mean_weights = vec![0.0; symbols.len()];
    for (m, _, _) in &fits {
        for (acc, w) in mean_weights.iter_mut().zip(m.phoneme_weights()) {
            *acc += w / cfg.folds as f64;
        }
    }
    log::debug!("attention trained on {n} utterances in {} folds", cfg.folds);

    let (modules, folds): (Vec<_>, Vec<_>) = fits.into_iter().map(|(m, r, _)| (m, r)).unzip();
    Ok((
        modules,
        AttentionReport {
            folds,
            pre: pre_report,
            post: post_report,
            phoneme_weights: symbols.into_iter().zip(mean_weights).collect(),
            comparable_with_standard_protocol: false,
        },
    ))
}
