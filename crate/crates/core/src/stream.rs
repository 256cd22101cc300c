//! Frame-by-frame causal inference with memory bounded by the models'
//! receptive fields.

use std::collections::VecDeque;

use crate::domain::Modality;
use crate::error::{Error, Result};
use crate::fusion::{self, FusionModel};
use crate::lstm::{Lstm, LstmState};
use crate::matrix::{argmax, Matrix};
use crate::models::{Component, ModelKind, TrainedComponent};
use crate::tcn::Tcn;

/// Channel counts of one synchronized input line: kinematics, vision, events.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FrameLayout {
    pub n_kin: usize,
    pub n_vis: usize,
    pub n_evt: usize,
}

impl FrameLayout {
    pub fn width(&self) -> usize {
        self.n_kin + self.n_vis + self.n_evt
    }

    fn get(&self, m: Modality) -> usize {
        match m {
            Modality::Kinematics => self.n_kin,
            Modality::Vision => self.n_vis,
            Modality::Events => self.n_evt,
        }
    }

    fn range(&self, m: Modality) -> std::ops::Range<usize> {
        match m {
            Modality::Kinematics => 0..self.n_kin,
            Modality::Vision => self.n_kin..self.n_kin + self.n_vis,
            Modality::Events => self.n_kin + self.n_vis..self.width(),
        }
    }

    /// Splits a comma-separated line into the three streams.
    pub fn parse_line(&self, line: &str) -> std::result::Result<Vec<f64>, String> {
        let values: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>().map_err(|_| format!("not a number: {:?}", f.trim())))
            .collect::<std::result::Result<_, _>>()?;
        if values.len() != self.width() {
            return Err(format!("expected {} values, found {}", self.width(), values.len()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(format!("non-finite value {v}"));
        }
        if let Some(v) = values[self.range(Modality::Events)].iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(format!("event value {v} is not 0 or 1"));
        }
        Ok(values)
    }
}

/// Causal TCN evaluated on a sliding window whose start stays on the pooling
/// grid and which covers the receptive field of the newest frame.
#[derive(Clone, Debug)]
struct TcnWindow {
    model: Tcn,
    reach: usize,
    period: usize,
    frames: VecDeque<Vec<f64>>,
    first: usize,
    t: usize,
}

impl TcnWindow {
    fn push(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        self.frames.push_back(x.to_vec());
        let t = self.t;
        self.t += 1;
        let start = t.saturating_sub(self.reach) / self.period * self.period;
        while self.first < start {
            self.frames.pop_front();
            self.first += 1;
        }
        let rows: Vec<&Vec<f64>> = self.frames.iter().collect();
        let probs = self.model.forward_matrix(&Matrix::from_rows(&rows)?)?;
        Ok(probs.row(probs.rows() - 1).to_vec())
    }
}

#[derive(Clone, Debug)]
enum Runner {
    Tcn(Box<TcnWindow>),
    Lstm(Lstm, LstmState),
    Events(crate::events::EnsembleModel),
}

#[derive(Clone, Debug)]
pub struct StreamingEstimator {
    layout: FrameLayout,
    n_states: usize,
    runners: Vec<(ModelKind, Runner)>,
    fusion: Option<FusionModel>,
    frames_seen: usize,
}

impl StreamingEstimator {
    /// `components` must be causal. With a fusion, they must be its members in
    /// weight-row order; without, exactly one component is expected.
    pub fn new(components: Vec<TrainedComponent>, fusion: Option<FusionModel>, layout: FrameLayout) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::config("no component models to stream"));
        }
        match &fusion {
            Some(f) => {
                let names: Vec<&str> = components.iter().map(|c| c.kind.name()).collect();
                if names != f.members.iter().map(String::as_str).collect::<Vec<_>>() {
                    return Err(Error::config(format!(
                        "fusion expects members {:?}, got {:?}",
                        f.members, names
                    )));
                }
            }
            None if components.len() > 1 => {
                return Err(Error::config("several components given without a fusion"));
            }
            None => {}
        }
        let n_states = components[0].model.n_states();
        let mut runners = Vec::with_capacity(components.len());
        for c in components {
            if !c.model.is_causal() {
                return Err(Error::config(format!(
                    "{} checkpoint is non-causal; streaming needs models trained with --mode causal",
                    c.kind
                )));
            }
            if c.model.n_states() != n_states {
                return Err(Error::shape("components disagree on the number of states"));
            }
            let m = c.kind.modality().ok_or_else(|| Error::config("fusion listed as a component"))?;
            if c.model.n_features() != layout.get(m) {
                return Err(Error::shape(format!(
                    "{} expects {} {} channels, the stream carries {}",
                    c.kind,
                    c.model.n_features(),
                    m.short_name(),
                    layout.get(m)
                )));
            }
            let runner = match c.model {
                Component::Tcn(model) => Runner::Tcn(Box::new(TcnWindow {
                    reach: model.receptive_field(),
                    period: 1 << model.config().n_layers,
                    model,
                    frames: VecDeque::new(),
                    first: 0,
                    t: 0,
                })),
                Component::Lstm(model) => {
                    let state = model.initial_state();
                    Runner::Lstm(model, state)
                }
                Component::Events(model) => Runner::Events(model),
            };
            runners.push((c.kind, runner));
        }
        Ok(StreamingEstimator {
            layout,
            n_states,
            runners,
            fusion,
            frames_seen: 0,
        })
    }

    pub fn layout(&self) -> FrameLayout {
        self.layout
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn frames_seen(&self) -> usize {
        self.frames_seen
    }

    /// Consumes one synchronized frame (kinematics, vision, events
    /// concatenated) and returns the scores and decided state for it.
    pub fn push(&mut self, frame: &[f64]) -> Result<(Vec<f64>, usize)> {
        if frame.len() != self.layout.width() {
            return Err(Error::shape(format!(
                "frame has {} values, expected {}",
                frame.len(),
                self.layout.width()
            )));
        }
        let layout = self.layout;
        let mut outputs = Vec::with_capacity(self.runners.len());
        for (kind, runner) in &mut self.runners {
            let x = &frame[layout.range(kind.modality().expect("component"))];
            outputs.push(match runner {
                Runner::Tcn(w) => w.push(x)?,
                Runner::Lstm(m, s) => m.step(s, x)?,
                Runner::Events(m) => m.predict(x)?,
            });
        }
        self.frames_seen += 1;
        let scores = match &self.fusion {
            Some(f) => {
                let rows: Vec<Matrix> = outputs
                    .iter()
                    .map(|o| Matrix::from_vec(1, o.len(), o.clone()))
                    .collect::<Result<_>>()?;
                let refs: Vec<&Matrix> = rows.iter().collect();
                fusion::fuse_scores(&refs, &f.weights)?.row(0).to_vec()
            }
            None => outputs.pop().expect("one component"),
        };
        let decision = argmax(&scores);
        Ok((scores, decision))
    }
}
