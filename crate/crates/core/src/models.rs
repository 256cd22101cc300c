//! Named component models (`tcn-kin`, `lstm-kin`, ...) and fusions built from
//! them: settings, training on a set of trials, prediction and persistence.

use std::fmt;
use std::str::FromStr;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Modality, ProbSeries, StateSequence, TrialBundle};
use crate::error::{Error, Result};
use crate::events::{self, CandidateSpec, EnsembleModel, SelectionOptions};
use crate::fusion::{self, FusionModel};
use crate::lstm::{self, Lstm, LstmConfig, LstmGrid, LstmTrainOptions, ValidationFold};
use crate::matrix::Matrix;
use crate::nn::{Checkpoint, NormGrad, OptimizerConfig};
use crate::seed::derive_seed;
use crate::tcn::{self, Tcn, TcnConfig, TcnTrainOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    TcnKin,
    TcnVis,
    LstmKin,
    Events,
    FusionKv,
    FusionKve,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::TcnKin,
        ModelKind::TcnVis,
        ModelKind::LstmKin,
        ModelKind::Events,
        ModelKind::FusionKv,
        ModelKind::FusionKve,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::TcnKin => "tcn-kin",
            ModelKind::TcnVis => "tcn-vis",
            ModelKind::LstmKin => "lstm-kin",
            ModelKind::Events => "events",
            ModelKind::FusionKv => "fusion-kv",
            ModelKind::FusionKve => "fusion-kve",
        }
    }

    pub fn is_fusion(self) -> bool {
        matches!(self, ModelKind::FusionKv | ModelKind::FusionKve)
    }

    /// Components combined by a fusion, in weight-row order.
    pub fn members(self) -> &'static [ModelKind] {
        match self {
            ModelKind::FusionKv => &[ModelKind::TcnKin, ModelKind::LstmKin, ModelKind::TcnVis],
            ModelKind::FusionKve => &[
                ModelKind::TcnKin,
                ModelKind::LstmKin,
                ModelKind::TcnVis,
                ModelKind::Events,
            ],
            _ => &[],
        }
    }

    pub fn modality(self) -> Option<Modality> {
        match self {
            ModelKind::TcnKin | ModelKind::LstmKin => Some(Modality::Kinematics),
            ModelKind::TcnVis => Some(Modality::Vision),
            ModelKind::Events => Some(Modality::Events),
            _ => None,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown model {s:?}; expected one of tcn-kin, tcn-vis, lstm-kin, events, fusion-kv, fusion-kve"
                ))
            })
    }
}

/// Components needed to produce the given rows, in canonical order.
pub fn required_components(kinds: &[ModelKind]) -> Vec<ModelKind> {
    let mut out: Vec<ModelKind> = kinds
        .iter()
        .flat_map(|&k| if k.is_fusion() { k.members().to_vec() } else { vec![k] })
        .collect();
    out.sort();
    out.dedup();
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Causal,
    NonCausal,
}

impl Mode {
    pub fn is_causal(self) -> bool {
        self == Mode::Causal
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "causal" => Ok(Mode::Causal),
            "non-causal" => Ok(Mode::NonCausal),
            _ => Err(Error::config(format!("unknown mode {s:?}; expected causal or non-causal"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TcnArch {
    pub filters: Vec<usize>,
    pub kernel_seconds: f64,
    pub norm_grad: NormGrad,
}

impl Default for TcnArch {
    fn default() -> Self {
        TcnArch {
            filters: vec![16, 32],
            kernel_seconds: 1.1,
            // stop-gradient left the deeper models stuck near the class prior on
            // short states; the full subgradient fits them
            norm_grad: NormGrad::Full,
        }
    }
}

impl TcnArch {
    pub fn config(&self, n_features: usize, n_states: usize, sample_rate_hz: f64, causal: bool) -> TcnConfig {
        TcnConfig {
            n_layers: self.filters.len(),
            filters: self.filters.clone(),
            kernel_seconds: self.kernel_seconds,
            sample_rate_hz,
            causal,
            n_features,
            n_states,
            norm_grad: self.norm_grad,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LstmArch {
    pub n_hidden_layers: usize,
    pub hidden_units: usize,
    pub dropout_prob: f64,
    pub initial_lr: f64,
    pub tbptt_window: usize,
}

impl Default for LstmArch {
    fn default() -> Self {
        LstmArch {
            n_hidden_layers: 1,
            hidden_units: 32,
            dropout_prob: 0.0,
            initial_lr: 1.0,
            tbptt_window: 64,
        }
    }
}

impl LstmArch {
    pub fn config(&self, n_features: usize, n_states: usize) -> LstmConfig {
        LstmConfig {
            n_hidden_layers: self.n_hidden_layers,
            hidden_units: self.hidden_units,
            dropout_prob: self.dropout_prob,
            initial_lr: self.initial_lr,
            n_features,
            n_states,
            tbptt_window: self.tbptt_window,
        }
    }
}

/// Architecture and training settings for every component.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub tcn_kin: TcnArch,
    pub tcn_vis: TcnArch,
    pub tcn_train: TcnTrainOptions,
    pub lstm: LstmArch,
    pub lstm_train: LstmTrainOptions,
    /// When set, the LSTM configuration is chosen by grid search with one
    /// validation fold per training user instead of taken from `lstm`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lstm_grid: Option<LstmGrid>,
    pub events_grid: Vec<CandidateSpec>,
    pub events_selection: SelectionOptions,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            tcn_kin: TcnArch::default(),
            tcn_vis: TcnArch::default(),
            tcn_train: TcnTrainOptions {
                epochs: 40,
                batch_size: 1,
                optimizer: OptimizerConfig::adam(3e-3),
                ..TcnTrainOptions::default()
            },
            lstm: LstmArch::default(),
            lstm_train: LstmTrainOptions::default(),
            lstm_grid: None,
            events_grid: events::default_grid(),
            events_selection: SelectionOptions::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub enum Component {
    Tcn(Tcn),
    Lstm(Lstm),
    Events(EnsembleModel),
}

impl Component {
    pub fn to_checkpoint(&self) -> Checkpoint {
        match self {
            Component::Tcn(m) => m.to_checkpoint(),
            Component::Lstm(m) => m.to_checkpoint(),
            Component::Events(m) => m.to_checkpoint(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        match ck.kind.as_str() {
            tcn::CHECKPOINT_KIND => Ok(Component::Tcn(Tcn::from_checkpoint(ck)?)),
            lstm::CHECKPOINT_KIND => Ok(Component::Lstm(Lstm::from_checkpoint(ck)?)),
            events::CHECKPOINT_KIND => Ok(Component::Events(EnsembleModel::from_checkpoint(ck)?)),
            other => Err(Error::config(format!("checkpoint kind {other:?} is not a component model"))),
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            Component::Tcn(m) => m.config().n_features,
            Component::Lstm(m) => m.config().n_features,
            Component::Events(m) => m.n_features,
        }
    }

    pub fn n_states(&self) -> usize {
        match self {
            Component::Tcn(m) => m.config().n_states,
            Component::Lstm(m) => m.config().n_states,
            Component::Events(m) => m.n_states,
        }
    }

    /// False only for a TCN with symmetric padding.
    pub fn is_causal(&self) -> bool {
        match self {
            Component::Tcn(m) => m.config().causal,
            _ => true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainedComponent {
    pub kind: ModelKind,
    pub model: Component,
    pub loss_curve: Vec<f64>,
}

impl TrainedComponent {
    pub fn predict(&self, trial: &TrialBundle) -> Result<ProbSeries> {
        let modality = self
            .kind
            .modality()
            .ok_or_else(|| Error::config(format!("{} is not a component model", self.kind)))?;
        let x = trial.stream(modality);
        if x.n_features() != self.model.n_features() {
            return Err(Error::shape(format!(
                "{} expects {} {} channels, trial {} has {}",
                self.kind,
                self.model.n_features(),
                modality.short_name(),
                trial.trial_id,
                x.n_features()
            )));
        }
        match &self.model {
            Component::Tcn(m) => m.forward(x),
            Component::Lstm(m) => m.forward(x),
            Component::Events(m) => m.predict_series(x),
        }
    }
}

fn check_trials(trials: &[&TrialBundle], n_states: usize) -> Result<()> {
    let first = trials.first().ok_or_else(|| Error::invalid("no training trials"))?;
    for t in trials {
        for m in Modality::ALL {
            if t.stream(m).n_features() != first.stream(m).n_features() {
                return Err(Error::shape(format!(
                    "trial {} has {} {} channels, trial {} has {}",
                    t.trial_id,
                    t.stream(m).n_features(),
                    m.short_name(),
                    first.trial_id,
                    first.stream(m).n_features()
                )));
            }
        }
        if t.sample_rate_hz() != first.sample_rate_hz() {
            return Err(Error::shape("trials differ in sample rate"));
        }
        if t.labels.labels().iter().any(|&l| l >= n_states) {
            return Err(Error::invalid(format!("trial {} has a label outside {n_states} states", t.trial_id)));
        }
    }
    Ok(())
}

fn stack(trials: &[&TrialBundle], modality: Modality) -> (Matrix, Vec<usize>) {
    let cols = trials[0].stream(modality).n_features();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for t in trials {
        data.extend_from_slice(t.stream(modality).data().as_slice());
        labels.extend_from_slice(t.labels.labels());
    }
    (Matrix::from_vec(labels.len(), cols, data).expect("consistent widths"), labels)
}

/// Distinct users in order of first appearance.
fn users_of(trials: &[&TrialBundle]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for t in trials {
        if !out.contains(&t.user_id) {
            out.push(t.user_id.clone());
        }
    }
    out
}

/// Trains one component on `trials`. `seed` seeds initialization and every
/// stochastic step of training.
pub fn train_component(
    kind: ModelKind,
    trials: &[&TrialBundle],
    n_states: usize,
    settings: &ModelSettings,
    mode: Mode,
    seed: u64,
) -> Result<TrainedComponent> {
    check_trials(trials, n_states)?;
    let modality = kind
        .modality()
        .ok_or_else(|| Error::config(format!("{kind} is a fusion, not a component")))?;
    let rate = trials[0].sample_rate_hz();
    let n_features = trials[0].stream(modality).n_features();
    let pairs: Vec<(&_, &StateSequence)> = trials.iter().map(|t| (t.stream(modality), &t.labels)).collect();
    let (model, loss_curve) = match kind {
        ModelKind::TcnKin | ModelKind::TcnVis => {
            let arch = if kind == ModelKind::TcnKin { &settings.tcn_kin } else { &settings.tcn_vis };
            let mut m = Tcn::build(arch.config(n_features, n_states, rate, mode.is_causal()), seed)?;
            let opts = TcnTrainOptions {
                seed,
                ..settings.tcn_train.clone()
            };
            let report = m.train(&pairs, &opts)?;
            (Component::Tcn(m), report.loss_curve)
        }
        ModelKind::LstmKin => {
            let opts = LstmTrainOptions {
                seed,
                ..settings.lstm_train.clone()
            };
            let config = match &settings.lstm_grid {
                Some(grid) => {
                    let users = users_of(trials);
                    if users.len() < 2 {
                        return Err(Error::invalid("LSTM grid search needs at least two training users"));
                    }
                    let folds: Vec<ValidationFold> = users
                        .iter()
                        .map(|u| {
                            let (val, train): (Vec<_>, Vec<_>) =
                                trials.iter().zip(&pairs).partition(|(t, _)| &t.user_id == u);
                            ValidationFold {
                                train: train.into_iter().map(|(_, p)| *p).collect(),
                                val: val.into_iter().map(|(_, p)| *p).collect(),
                            }
                        })
                        .collect();
                    let result = lstm::grid_search(grid, &folds, n_features, n_states, settings.lstm.tbptt_window, &opts)?;
                    info!(
                        "lstm grid picked {} layer(s) x {} units, dropout {}, lr {}",
                        result.best.n_hidden_layers,
                        result.best.hidden_units,
                        result.best.dropout_prob,
                        result.best.initial_lr
                    );
                    result.best
                }
                None => settings.lstm.config(n_features, n_states),
            };
            let mut m = Lstm::build(config, seed)?;
            let curve = m.train(&pairs, &opts)?;
            (Component::Lstm(m), curve)
        }
        ModelKind::Events => {
            let users = users_of(trials);
            // one held-out user validates candidate selection; members refit on the rest
            let (fit, val): (Vec<&TrialBundle>, Vec<&TrialBundle>) = if users.len() >= 2 {
                let held = users.last().expect("two users");
                trials.iter().partition(|t| &t.user_id != held)
            } else if trials.len() >= 2 {
                let cut = trials.len() - (trials.len() / 5).max(1);
                (trials[..cut].to_vec(), trials[cut..].to_vec())
            } else {
                (trials.to_vec(), trials.to_vec())
            };
            let (tx, ty) = stack(&fit, modality);
            let (mut vx, mut vy) = stack(&val, modality);
            if vy.iter().all(|&l| l == vy[0]) {
                log::warn!("event validation split shows a single state; validating on the fitting frames");
                (vx, vy) = (tx.clone(), ty.clone());
            }
            let opts = SelectionOptions {
                seed,
                ..settings.events_selection.clone()
            };
            let (m, _) = events::select_ensemble(&settings.events_grid, &tx, &ty, &vx, &vy, n_states, &opts)?;
            (Component::Events(m), Vec::new())
        }
        _ => unreachable!("fusion kinds rejected above"),
    };
    Ok(TrainedComponent {
        kind,
        model,
        loss_curve,
    })
}

/// Trains every component in `kinds` in parallel. Component `k` uses the seed
/// derived from `root` and `"{scope}/{k}"`.
pub fn train_components(
    kinds: &[ModelKind],
    trials: &[&TrialBundle],
    n_states: usize,
    settings: &ModelSettings,
    mode: Mode,
    root: u64,
    scope: &str,
) -> Result<Vec<TrainedComponent>> {
    kinds
        .par_iter()
        .map(|&k| train_component(k, trials, n_states, settings, mode, derive_seed(root, &format!("{scope}/{k}"))))
        .collect()
}

/// Fusion weights for `kind` from the members' predictions on `trials`.
pub fn fit_fusion(kind: ModelKind, members: &[&TrainedComponent], trials: &[&TrialBundle], n_states: usize) -> Result<FusionModel> {
    let want = kind.members();
    if want.is_empty() {
        return Err(Error::config(format!("{kind} is not a fusion")));
    }
    if members.iter().map(|m| m.kind).ne(want.iter().copied()) {
        return Err(Error::config(format!("{kind} needs components {:?}", want.iter().map(|k| k.name()).collect::<Vec<_>>())));
    }
    let mut counts: Option<fusion::ConfusionCounts> = None;
    for t in trials {
        let preds = members.iter().map(|m| m.predict(t)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&ProbSeries> = preds.iter().collect();
        let c = fusion::confusion_counts(&refs, &t.labels)?;
        match counts.as_mut() {
            Some(acc) => acc.merge(&c)?,
            None => counts = Some(c),
        }
    }
    let counts = counts.ok_or_else(|| Error::invalid("no trials to fit fusion weights"))?;
    if counts.n_states != n_states {
        return Err(Error::shape("member state count differs from the task"));
    }
    Ok(FusionModel {
        members: want.iter().map(|k| k.name().to_string()).collect(),
        weights: fusion::odds_ratio_weights(&counts)?,
    })
}

/// Combined per-frame scores of a fusion given its members' outputs.
pub fn fused_scores(model: &FusionModel, member_preds: &[&ProbSeries]) -> Result<Matrix> {
    fusion::fuse(member_preds, &model.weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.name()));
        }
        assert!("tcn".parse::<ModelKind>().is_err());
        assert_eq!("non-causal".parse::<Mode>().unwrap(), Mode::NonCausal);
        assert!("batch".parse::<Mode>().is_err());
    }

    #[test]
    fn component_sets() {
        assert_eq!(
            required_components(&[ModelKind::FusionKve, ModelKind::TcnKin]),
            vec![ModelKind::TcnKin, ModelKind::TcnVis, ModelKind::LstmKin, ModelKind::Events]
        );
        assert_eq!(required_components(&[ModelKind::Events]), vec![ModelKind::Events]);
        assert!(ModelKind::FusionKv.members().iter().all(|k| k.modality() != Some(Modality::Events)));
    }

    #[test]
    fn settings_parse_partially() {
        let s: ModelSettings = serde_json::from_str(r#"{"lstm": {"hidden_units": 8}, "tcn_train": {"epochs": 3}}"#).unwrap();
        assert_eq!(s.lstm.hidden_units, 8);
        assert_eq!(s.lstm.n_hidden_layers, 1);
        assert_eq!(s.tcn_train.epochs, 3);
        assert_eq!(s.events_grid.len(), 12);
    }
}
