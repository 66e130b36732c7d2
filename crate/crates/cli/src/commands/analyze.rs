use std::path::PathBuf;

use mixgop_core::allophony::{analyze_allophony, AnmiReport};
use mixgop_core::attention::train_attention;
use mixgop_core::eval::evaluate;
use mixgop_core::features::{load_feature_set, FeatureSet, Split};
use mixgop_core::{AttentionReport, ScoreTable};
use serde::Serialize;

use super::{capped, has_ground_truth, train_models, Run};
use crate::config::Method;
use crate::error::CliError;
use crate::output::{write_csv, write_json};

#[derive(Serialize)]
struct AnmiRow<'a> {
    config_hash: &'a str,
    encoder_tag: &'a str,
    layer_index: u32,
    scope: &'static str,
    phoneme: &'a str,
    n: usize,
    n_clusters: Option<usize>,
    anmi: Option<f64>,
}

#[derive(Serialize)]
struct LayerRow<'a> {
    config_hash: &'a str,
    manifest: String,
    encoder_tag: &'a str,
    layer_index: u32,
    pooled_anmi: f64,
    pooled_n: usize,
    mixgop_tau: Option<f64>,
}

#[derive(Serialize)]
struct WeightRow<'a> {
    config_hash: &'a str,
    soft_rank_eps: f64,
    phoneme: &'a str,
    weight: f64,
}

#[derive(Serialize)]
struct FoldRow<'a> {
    config_hash: &'a str,
    soft_rank_eps: f64,
    fold: usize,
    n_train: usize,
    n_test: usize,
    direction: f64,
    pre_tau: Option<f64>,
    post_tau: Option<f64>,
    final_objective: Option<f64>,
}

#[derive(Serialize)]
struct LayerResult {
    manifest: PathBuf,
    anmi: AnmiReport,
    mixgop_tau: Option<f64>,
}

#[derive(Serialize)]
struct AttentionRun {
    soft_rank_eps: f64,
    report: AttentionReport,
}

#[derive(Serialize)]
struct AnalyzeDoc {
    layers: Vec<LayerResult>,
    attention: Vec<AttentionRun>,
}

/// MixGoP test scores from models trained in memory.
fn mixgop_scores(run: &Run, fs: &FeatureSet) -> Result<ScoreTable, CliError> {
    let train = capped(fs, run.cfg.subsample_cap.0, run.cfg.seed)?;
    let (models, _) = train_models(&run.cfg, &train, Method::Mixgop)?;
    models.score(fs, Split::Test, Method::Mixgop)
}

/// Allophony per manifest (layer) plus cross-validated attention pooling
/// on the primary manifest. Steps that need utterance scores are skipped
/// with a warning when the test split has none.
pub fn analyze(run: &Run) -> Result<(), CliError> {
    let cfg = &run.cfg;
    let primary = run.load_primary()?;
    let mut layers = Vec::new();
    let mut primary_scores = None;
    for (i, path) in std::iter::once(&cfg.manifest).chain(&cfg.layer_manifests).enumerate() {
        let loaded;
        let fs = if i == 0 {
            &primary
        } else {
            loaded = load_feature_set(path)?;
            &loaded
        };
        let anmi = analyze_allophony(fs, &cfg.anmi)?;
        let mixgop_tau = if has_ground_truth(fs) {
            let table = mixgop_scores(run, fs)?;
            let tau = evaluate(&table, fs, cfg.level)?.kendall_tau;
            if i == 0 {
                primary_scores = Some(table);
            }
            Some(tau)
        } else {
            log::warn!("{} has no utterance scores; skipping the MixGoP evaluation", path.display());
            None
        };
        layers.push(LayerResult {
            manifest: path.clone(),
            anmi,
            mixgop_tau,
        });
    }

    let mut attention = Vec::new();
    match &primary_scores {
        Some(table) => {
            let mut strengths = vec![cfg.attention.soft_rank.regularization_strength];
            for &e in &cfg.soft_rank_sweep {
                if !strengths.contains(&e) {
                    strengths.push(e);
                }
            }
            for eps in strengths {
                let mut acfg = cfg.attention.clone();
                acfg.soft_rank.regularization_strength = eps;
                let (_, report) = train_attention(table, &primary, &acfg)?;
                log::info!(
                    "soft-rank strength {eps}: tau {} -> {}",
                    report.pre.kendall_tau,
                    report.post.kendall_tau
                );
                attention.push(AttentionRun {
                    soft_rank_eps: eps,
                    report,
                });
            }
        }
        None => log::warn!("skipping attention pooling: no utterance scores in the test split"),
    }

    run.create_out()?;
    let hash = run.hash.as_str();
    let mut anmi_rows = Vec::new();
    let mut layer_rows = Vec::new();
    for l in &layers {
        let r = &l.anmi;
        for p in &r.per_phoneme {
            anmi_rows.push(AnmiRow {
                config_hash: hash,
                encoder_tag: &r.encoder_tag,
                layer_index: r.layer_index,
                scope: "phoneme",
                phoneme: &p.phoneme,
                n: p.n,
                n_clusters: Some(p.n_clusters),
                anmi: p.anmi,
            });
        }
        anmi_rows.push(AnmiRow {
            config_hash: hash,
            encoder_tag: &r.encoder_tag,
            layer_index: r.layer_index,
            scope: "pooled",
            phoneme: "",
            n: r.pooled_n,
            n_clusters: None,
            anmi: Some(r.pooled),
        });
        layer_rows.push(LayerRow {
            config_hash: hash,
            manifest: l.manifest.display().to_string(),
            encoder_tag: &r.encoder_tag,
            layer_index: r.layer_index,
            pooled_anmi: r.pooled,
            pooled_n: r.pooled_n,
            mixgop_tau: l.mixgop_tau,
        });
    }
    write_csv(&run.out().join("anmi.csv"), &anmi_rows)?;
    write_csv(&run.out().join("anmi_layers.csv"), &layer_rows)?;

    let mut weight_rows = Vec::new();
    let mut fold_rows = Vec::new();
    for a in &attention {
        for (p, w) in &a.report.phoneme_weights {
            weight_rows.push(WeightRow {
                config_hash: hash,
                soft_rank_eps: a.soft_rank_eps,
                phoneme: p,
                weight: *w,
            });
        }
        for f in &a.report.folds {
            fold_rows.push(FoldRow {
                config_hash: hash,
                soft_rank_eps: a.soft_rank_eps,
                fold: f.fold,
                n_train: f.n_train,
                n_test: f.n_test,
                direction: f.direction,
                pre_tau: f.pre_tau,
                post_tau: f.post_tau,
                final_objective: f.objective_trace.last().copied(),
            });
        }
    }
    if !attention.is_empty() {
        write_csv(&run.out().join("attention_weights.csv"), &weight_rows)?;
        write_csv(&run.out().join("attention_folds.csv"), &fold_rows)?;
    }
    write_json(&run.out().join("analyze.json"), hash, &AnalyzeDoc { layers, attention })
}
