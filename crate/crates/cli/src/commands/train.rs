use std::collections::BTreeMap;

use mixgop_core::attention::train_attention;
use mixgop_core::classifier::train_classifier;
use mixgop_core::eval::{evaluate as eval_table, EvalLevel, EvalReport};
use mixgop_core::features::{group_by_phoneme, FeatureSet, Split};
use mixgop_core::gmm::fit_per_phoneme;
use mixgop_core::ood::{build_knn_indexes, fit_global_ocsvm, fit_per_phoneme_ocsvm, OcsvmFit, OcsvmModels};
use serde::Serialize;
use serde_json::{json, Value};

use super::{capped, write_scores, Run};
use crate::config::{Method, RunConfig};
use crate::error::CliError;
use crate::models::{family_dir, ModelSet};
use crate::output::{write_csv, write_json};

fn svm_log(phoneme: &str, n_train: usize, fit: &OcsvmFit) -> Value {
    json!({
        "phoneme": phoneme,
        "n_train": n_train,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "n_support_vectors": fit.model.support_vectors.nrows(),
        "rho": fit.model.rho,
    })
}

/// Fits the models `method` needs on the train split of `train`, which
/// should already be capped. The log is `None` for kNN, which has no
/// optimization to report.
pub fn train_models(cfg: &RunConfig, train: &FeatureSet, method: Method) -> Result<(ModelSet, Option<Value>), CliError> {
    let counts: BTreeMap<String, usize> = group_by_phoneme(train, Split::Train)
        .into_iter()
        .map(|(p, rows)| (p, rows.len()))
        .collect();
    Ok(match method.model_family() {
        "gmm" => {
            let fits = fit_per_phoneme(train, &cfg.gmm)?;
            let entries: Vec<Value> = fits
                .iter()
                .map(|(p, f)| {
                    json!({
                        "phoneme": p,
                        "n_train": counts[p],
                        "n_components": f.n_components,
                        "em_iterations": f.em_iterations,
                        "converged": f.converged,
                        "log_likelihood_trace": f.log_likelihood_trace,
                    })
                })
                .collect();
            let models = fits.into_iter().map(|(p, f)| (p, f.model)).collect();
            (ModelSet::Gmm(models), Some(json!({ "entries": entries })))
        }
        "knn" => (ModelSet::Knn(build_knn_indexes(train)?), None),
        "osvm" => {
            let fit = fit_global_ocsvm(train, &cfg.ocsvm)?;
            let n: usize = counts.values().sum();
            let log = json!({ "entries": [svm_log("", n, &fit)] });
            (ModelSet::Osvm(OcsvmModels::Global(fit.model)), Some(log))
        }
        "p_osvm" => {
            let fits = fit_per_phoneme_ocsvm(train, &cfg.ocsvm)?;
            let entries: Vec<Value> = fits.iter().map(|(p, f)| svm_log(p, counts[p], f)).collect();
            let models = fits.into_iter().map(|(p, f)| (p, f.model)).collect();
            (ModelSet::Osvm(OcsvmModels::PerPhoneme(models)), Some(json!({ "entries": entries })))
        }
        _ => {
            let fit = train_classifier(train, &cfg.classifier)?;
            let log = json!({ "iterations": fit.losses.len(), "losses": fit.losses });
            (ModelSet::Classifier(fit.classifier), Some(log))
        }
    })
}

pub fn train(run: &Run) -> Result<(), CliError> {
    let cfg = &run.cfg;
    let fs = run.load_primary()?;
    let train = capped(&fs, cfg.subsample_cap.0, cfg.seed)?;
    let (models, log) = train_models(cfg, &train, cfg.method)?;
    run.create_out()?;
    let dir = family_dir(run.out(), cfg.method);
    let files = models.save(&dir, cfg.method.model_family(), &run.hash)?;
    log::info!("wrote {} {} artifacts to {}", files.len(), cfg.method.model_family(), dir.display());
    if let Some(mut log) = log {
        log["method"] = json!(cfg.method.tag());
        log["subsample_cap"] = json!(cfg.subsample_cap.0);
        write_json(&run.out().join("training_log.json"), &run.hash, &log)?;
    }
    Ok(())
}

fn test_scores(run: &Run, fs: &FeatureSet) -> Result<mixgop_core::ScoreTable, CliError> {
    let method = run.cfg.method;
    let models = ModelSet::load(&family_dir(run.out(), method), method)?;
    models.score(fs, Split::Test, method)
}

pub fn score(run: &Run) -> Result<(), CliError> {
    let fs = run.load_primary()?;
    let table = test_scores(run, &fs)?;
    run.create_out()?;
    write_scores(&run.out().join("scores.csv"), &run.hash, &table)
}

#[derive(Serialize)]
struct ReportRow<'a> {
    config_hash: &'a str,
    dataset: &'a str,
    encoder_tag: &'a str,
    layer_index: u32,
    method: &'a str,
    level: String,
    n: usize,
    kendall_tau: f64,
    abs_kendall_tau: f64,
    comparable: bool,
}

pub fn evaluate(run: &Run) -> Result<(), CliError> {
    let cfg = &run.cfg;
    let fs = run.load_primary()?;
    let table = test_scores(run, &fs)?;
    let (report, comparable, attention) = if cfg.method == Method::MixgopAttn {
        if cfg.level != EvalLevel::Utterance {
            return Err(CliError::Usage("mixgop_attn pools utterances and has no segment-level report".into()));
        }
        let (_, report) = train_attention(&table, &fs, &cfg.attention)?;
        (report.post.clone(), report.comparable_with_standard_protocol, Some(report))
    } else {
        (eval_table(&table, &fs, cfg.level)?, true, None)
    };
    run.create_out()?;
    write_report(run, &report, comparable)?;
    #[derive(Serialize)]
    struct Doc<'a> {
        report: &'a EvalReport,
        comparable_with_standard_protocol: bool,
        #[serde(skip_serializing_if = "Option::is_none")]
        attention: Option<&'a mixgop_core::AttentionReport>,
    }
    write_json(
        &run.out().join("report.json"),
        &run.hash,
        &Doc {
            report: &report,
            comparable_with_standard_protocol: comparable,
            attention: attention.as_ref(),
        },
    )
}

fn write_report(run: &Run, r: &EvalReport, comparable: bool) -> Result<(), CliError> {
    let row = ReportRow {
        config_hash: &run.hash,
        dataset: &r.dataset,
        encoder_tag: &r.encoder_tag,
        layer_index: r.layer_index,
        method: run.cfg.method.tag(),
        level: r.level.to_string(),
        n: r.n,
        kendall_tau: r.kendall_tau,
        abs_kendall_tau: r.abs_kendall_tau,
        comparable,
    };
    write_csv(&run.out().join("report.csv"), &[row])
}
