//! Leave-one-user-out experiments over component models and fusions.

use std::collections::BTreeMap;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::MetricReport;
use crate::domain::{louo_splits, Fold, ProbSeries, StateSequence, TrialBundle};
use crate::error::{Error, Result};
use crate::fusion::{self, FusionModel};
use crate::models::{self, ModelKind, ModelSettings, Mode, TrainedComponent};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LouoOptions {
    pub models: Vec<ModelKind>,
    pub mode: Mode,
    pub settings: ModelSettings,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FoldReport {
    pub user_id: String,
    pub reports: Vec<MetricReport>,
    /// Fusion name -> weights fitted on the fold's training predictions.
    pub fusions: BTreeMap<String, FusionModel>,
}

impl FoldReport {
    pub fn accuracy(&self, kind: ModelKind) -> Option<f64> {
        self.reports.iter().find(|r| r.model == kind.name()).map(|r| r.frame_accuracy_pct)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LouoReport {
    pub mode: Mode,
    pub folds: Vec<FoldReport>,
    pub aggregate: Vec<MetricReport>,
}

impl LouoReport {
    pub fn accuracy(&self, kind: ModelKind) -> Option<f64> {
        self.aggregate.iter().find(|r| r.model == kind.name()).map(|r| r.frame_accuracy_pct)
    }
}

/// Decisions of every requested model on one test trial.
#[derive(Clone, Debug)]
pub struct TrialDecisions {
    pub trial_id: String,
    pub user_id: String,
    pub per_model: Vec<(String, StateSequence)>,
}

#[derive(Clone, Debug)]
pub struct LouoOutcome {
    pub report: LouoReport,
    pub decisions: Vec<TrialDecisions>,
}

/// Trains on all users but one, tests on the held-out user, for every user.
/// Fusion weights come from the components' predictions on their own training
/// trials. Edit scores are reported in non-causal mode only.
pub fn run_louo(trials: &[TrialBundle], n_states: usize, opts: &LouoOptions) -> Result<LouoOutcome> {
    if opts.models.is_empty() {
        return Err(Error::config("no models requested"));
    }
    let folds = louo_splits(trials)?;
    let results: Vec<(FoldReport, Vec<TrialDecisions>)> = folds
        .par_iter()
        .map(|fold| run_fold(trials, fold, n_states, opts))
        .collect::<Result<_>>()?;
    let mut aggregate = Vec::new();
    for (i, kind) in opts.models.iter().enumerate() {
        let rows: Vec<&MetricReport> = results.iter().map(|(f, _)| &f.reports[i]).collect();
        let agg = MetricReport::aggregate(&rows)?;
        info!("{kind}: mean LOUO accuracy {:.2}%", agg.frame_accuracy_pct);
        aggregate.push(agg);
    }
    let (fold_reports, decisions): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(LouoOutcome {
        report: LouoReport {
            mode: opts.mode,
            folds: fold_reports,
            aggregate,
        },
        decisions: decisions.into_iter().flatten().collect(),
    })
}

fn run_fold(trials: &[TrialBundle], fold: &Fold, n_states: usize, opts: &LouoOptions) -> Result<(FoldReport, Vec<TrialDecisions>)> {
    let train: Vec<&TrialBundle> = fold.train.iter().map(|&i| &trials[i]).collect();
    let test: Vec<&TrialBundle> = fold.test.iter().map(|&i| &trials[i]).collect();
    let needed = models::required_components(&opts.models);
    let components = models::train_components(
        &needed,
        &train,
        n_states,
        &opts.settings,
        opts.mode,
        opts.seed,
        &format!("louo/{}", fold.user_id),
    )?;
    let by_kind = |k: ModelKind| components.iter().find(|c| c.kind == k).expect("component trained");
    let mut fusions = BTreeMap::new();
    for &k in opts.models.iter().filter(|k| k.is_fusion()) {
        let members: Vec<&TrainedComponent> = k.members().iter().map(|&m| by_kind(m)).collect();
        fusions.insert(k.name().to_string(), models::fit_fusion(k, &members, &train, n_states)?);
    }

    let mut decisions = Vec::with_capacity(test.len());
    for t in &test {
        let mut probs: BTreeMap<ModelKind, ProbSeries> = BTreeMap::new();
        for c in &components {
            probs.insert(c.kind, c.predict(t)?);
        }
        let mut per_model = Vec::with_capacity(opts.models.len());
        for &k in &opts.models {
            let seq = if k.is_fusion() {
                let members: Vec<&ProbSeries> = k.members().iter().map(|m| &probs[m]).collect();
                fusion::decide(&models::fused_scores(&fusions[k.name()], &members)?)
            } else {
                probs[&k].decisions()
            };
            per_model.push((k.name().to_string(), seq));
        }
        decisions.push(TrialDecisions {
            trial_id: t.trial_id.clone(),
            user_id: t.user_id.clone(),
            per_model,
        });
    }
    let with_edit = !opts.mode.is_causal();
    let reports = opts
        .models
        .iter()
        .enumerate()
        .map(|(i, k)| {
            let pairs: Vec<(&StateSequence, &StateSequence)> =
                decisions.iter().zip(&test).map(|(d, t)| (&d.per_model[i].1, &t.labels)).collect();
            MetricReport::compute(k.name(), &pairs, n_states, with_edit)
        })
        .collect::<Result<Vec<_>>>()?;
    info!(
        "fold {}: {}",
        fold.user_id,
        reports
            .iter()
            .map(|r| format!("{} {:.1}%", r.model, r.frame_accuracy_pct))
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok((
        FoldReport {
            user_id: fold.user_id.clone(),
            reports,
            fusions,
        },
        decisions,
    ))
}
