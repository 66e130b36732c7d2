use mixgop_core::eval::evaluate;
use mixgop_core::features::{group_by_phoneme, FeatureSet, Split};
use rayon::prelude::*;
use serde::Serialize;

use super::{capped, train_models, Run};
use crate::config::{Cap, Method};
use crate::error::CliError;
use crate::output::write_csv;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub config_hash: String,
    pub method: String,
    pub cap: String,
    /// Empty for methods without a component count.
    pub components: Option<usize>,
    pub status: String,
    pub reason: String,
    pub n: Option<usize>,
    pub kendall_tau: Option<f64>,
    pub abs_kendall_tau: Option<f64>,
}

/// Smallest per-phoneme training count, with the phoneme holding it.
fn smallest_phoneme(train: &FeatureSet) -> Option<(String, usize)> {
    group_by_phoneme(train, Split::Train)
        .into_iter()
        .map(|(p, rows)| (p, rows.len()))
        .min_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(&b.0)))
}

fn run_point(run: &Run, fs: &FeatureSet, train: &FeatureSet, cap: Cap, components: Option<usize>) -> Result<AblationRow, CliError> {
    let mut row = AblationRow {
        config_hash: run.hash.clone(),
        method: run.cfg.method.tag().to_string(),
        cap: cap.to_string(),
        components,
        status: "ok".into(),
        reason: String::new(),
        n: None,
        kendall_tau: None,
        abs_kendall_tau: None,
    };
    let mut cfg = run.cfg.clone();
    if let Some(c) = components {
        if let Some((p, n)) = smallest_phoneme(train) {
            if c > n {
                row.status = "skipped".into();
                row.reason = format!("{c} components exceed the {n} training samples of phoneme {p}");
                log::info!("cap {cap}: {}", row.reason);
                return Ok(row);
            }
        }
        cfg.gmm.n_components = c;
    }
    let (models, _) = train_models(&cfg, train, cfg.method)?;
    let table = models.score(fs, Split::Test, cfg.method)?;
    let report = evaluate(&table, fs, cfg.level)?;
    row.n = Some(report.n);
    row.kendall_tau = Some(report.kendall_tau);
    row.abs_kendall_tau = Some(report.abs_kendall_tau);
    Ok(row)
}

/// Evaluates every (cap, component count) grid point. Methods other than
/// MixGoP only vary the cap.
pub fn ablate(run: &Run) -> Result<Vec<AblationRow>, CliError> {
    let cfg = &run.cfg;
    if cfg.method == Method::MixgopAttn {
        return Err(CliError::Usage("ablate supports every method except mixgop_attn".into()));
    }
    let fs = run.load_primary()?;
    let trains: Vec<(Cap, FeatureSet)> = cfg
        .ablation
        .caps
        .iter()
        .map(|&cap| Ok((cap, capped(&fs, cap.0, cfg.seed)?)))
        .collect::<Result<_, CliError>>()?;
    let components: Vec<Option<usize>> = if cfg.method == Method::Mixgop {
        cfg.ablation.components.iter().copied().map(Some).collect()
    } else {
        vec![None]
    };
    let points: Vec<(usize, Option<usize>)> = (0..trains.len())
        .flat_map(|i| components.iter().map(move |&c| (i, c)))
        .collect();
    let rows: Vec<AblationRow> = points
        .into_par_iter()
        .map(|(i, c)| run_point(run, &fs, &trains[i].1, trains[i].0, c))
        .collect::<Result<_, CliError>>()?;
    run.create_out()?;
    write_csv(&run.out().join("ablation.csv"), &rows)?;
    Ok(rows)
}
