//! Synthetic multi-modal trials driven by a task finite-state machine.
//!
//! A walk through the FSM gives the ground-truth state path (log-normal dwell
//! times). Each state then emits kinematics (template + noise + drift), vision
//! features (centroid + noise, with camera-motion bursts) and binary events
//! (pattern + bit flips). A state whose modality mask lacks a stream emits,
//! per segment, one signature drawn from a pool shared by all such states.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{FeatureSequence, Modality, StateSequence, StateVocab, TrialBundle};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed::{self, Rng};

const SUTURING: &str = include_str!("../data/suturing.json");
const RIOUS: &str = include_str!("../data/rious.json");

pub const PROB_TOL: f64 = 1e-9;

// ---------------------------------------------------------------- task files

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateEntry {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub mean_duration_s: f64,
    #[serde(default = "default_jitter")]
    pub duration_jitter: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_pattern: Option<Vec<u8>>,
    #[serde(default = "all_modalities")]
    pub modality_mask: Vec<Modality>,
}

fn default_jitter() -> f64 {
    0.3
}

fn all_modalities() -> Vec<Modality> {
    Modality::ALL.to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeEntry {
    pub from: String,
    pub to: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
}

/// On-disk task description: graph, durations and optional signatures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskFile {
    pub task: String,
    #[serde(default)]
    pub event_channels: Vec<String>,
    pub states: Vec<StateEntry>,
    pub start: String,
    /// Accepting state -> probability of ending the trial on leaving it.
    pub accepting: BTreeMap<String, f64>,
    pub edges: Vec<EdgeEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskFsm {
    pub vocab: StateVocab,
    pub start: usize,
    pub accepting: Vec<bool>,
    /// Outgoing `(next, probability)` per state. For an accepting state the
    /// missing mass is the probability of stopping.
    pub transitions: Vec<Vec<(usize, f64)>>,
}

impl TaskFsm {
    pub fn n_states(&self) -> usize {
        self.vocab.len()
    }

    pub fn stop_prob(&self, s: usize) -> f64 {
        if !self.accepting[s] {
            return 0.0;
        }
        (1.0 - self.transitions[s].iter().map(|e| e.1).sum::<f64>()).max(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.n_states();
        if self.start >= b || self.accepting.len() != b || self.transitions.len() != b {
            return Err(Error::config("FSM tables do not match the vocabulary"));
        }
        for (s, out) in self.transitions.iter().enumerate() {
            let name = self.vocab.name(s);
            let mut sum = 0.0;
            for &(n, p) in out {
                if n >= b || !(0.0..=1.0 + PROB_TOL).contains(&p) {
                    return Err(Error::config(format!("bad edge out of {name}")));
                }
                sum += p;
            }
            if self.accepting[s] {
                if sum > 1.0 + PROB_TOL {
                    return Err(Error::config(format!(
                        "outgoing probabilities of accepting state {name} sum to {sum} > 1"
                    )));
                }
            } else if (sum - 1.0).abs() > PROB_TOL {
                return Err(Error::config(format!(
                    "outgoing probabilities of {name} sum to {sum}, expected 1"
                )));
            }
        }
        let forward = reach(b, self.start, |s| self.transitions[s].iter().filter(|e| e.1 > 0.0).map(|e| e.0).collect());
        if let Some(s) = (0..b).find(|&s| !forward[s]) {
            return Err(Error::config(format!("state {} unreachable from start", self.vocab.name(s))));
        }
        // reverse search from every accepting state
        let mut rev = vec![Vec::new(); b];
        for (s, out) in self.transitions.iter().enumerate() {
            for &(n, p) in out {
                if p > 0.0 {
                    rev[n].push(s);
                }
            }
        }
        let mut can_finish = vec![false; b];
        for a in (0..b).filter(|&a| self.accepting[a]) {
            for (s, r) in reach(b, a, |s| rev[s].clone()).into_iter().enumerate() {
                can_finish[s] |= r;
            }
        }
        if let Some(s) = (0..b).find(|&s| !can_finish[s]) {
            return Err(Error::config(format!(
                "no accepting state reachable from {}",
                self.vocab.name(s)
            )));
        }
        Ok(())
    }
}

fn reach(b: usize, from: usize, next: impl Fn(usize) -> Vec<usize>) -> Vec<bool> {
    let mut seen = vec![false; b];
    let mut q = VecDeque::from([from]);
    seen[from] = true;
    while let Some(s) = q.pop_front() {
        for n in next(s) {
            if !seen[n] {
                seen[n] = true;
                q.push_back(n);
            }
        }
    }
    seen
}

/// Parsed task: FSM plus per-state duration and signature hints.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub name: String,
    pub fsm: TaskFsm,
    pub states: Vec<StateEntry>,
}

impl TaskSpec {
    pub fn from_file(file: TaskFile) -> Result<Self> {
        let vocab = StateVocab::new(file.states.iter().map(|s| s.name.clone()))?;
        let idx = |name: &str| {
            vocab
                .index_of(name)
                .ok_or_else(|| Error::config(format!("unknown state {name:?} in task file")))
        };
        let b = vocab.len();
        for s in &file.states {
            if !(s.mean_duration_s > 0.0 && s.mean_duration_s.is_finite()) {
                return Err(Error::config(format!("state {} needs mean_duration_s > 0", s.name)));
            }
            if !(s.duration_jitter >= 0.0 && s.duration_jitter.is_finite()) {
                return Err(Error::config(format!("state {} needs duration_jitter >= 0", s.name)));
            }
            if let Some(p) = &s.event_pattern {
                if p.iter().any(|&v| v > 1) {
                    return Err(Error::config(format!("event pattern of {} is not binary", s.name)));
                }
            }
        }
        let start = idx(&file.start)?;
        let mut accepting = vec![false; b];
        let mut stop = vec![0.0; b];
        for (name, &p) in &file.accepting {
            let s = idx(name)?;
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("stop probability of {name} outside [0, 1]")));
            }
            accepting[s] = true;
            stop[s] = p;
        }
        let mut explicit: Vec<Vec<(usize, f64)>> = vec![Vec::new(); b];
        let mut implicit: Vec<Vec<usize>> = vec![Vec::new(); b];
        for e in &file.edges {
            let (f, t) = (idx(&e.from)?, idx(&e.to)?);
            if explicit[f].iter().any(|x| x.0 == t) || implicit[f].contains(&t) {
                return Err(Error::config(format!("duplicate edge {} -> {}", e.from, e.to)));
            }
            match e.p {
                Some(p) => explicit[f].push((t, p)),
                None => implicit[f].push(t),
            }
        }
        let mut transitions = Vec::with_capacity(b);
        for s in 0..b {
            let fixed: f64 = explicit[s].iter().map(|e| e.1).sum();
            let mut out = explicit[s].clone();
            if !implicit[s].is_empty() {
                let share = (1.0 - stop[s] - fixed) / implicit[s].len() as f64;
                if share < -PROB_TOL {
                    return Err(Error::config(format!(
                        "explicit probabilities out of {} leave no mass for its other edges",
                        vocab.name(s)
                    )));
                }
                out.extend(implicit[s].iter().map(|&t| (t, share.max(0.0))));
            }
            out.sort_by_key(|e| e.0);
            transitions.push(out);
        }
        let fsm = TaskFsm {
            vocab,
            start,
            accepting,
            transitions,
        };
        fsm.validate()?;
        for (s, entry) in file.states.iter().enumerate() {
            if fsm.accepting[s] && (fsm.stop_prob(s) - stop[s]).abs() > 1e-6 {
                return Err(Error::config(format!(
                    "edges out of accepting state {} imply stop probability {} but {} was declared",
                    entry.name,
                    fsm.stop_prob(s),
                    stop[s]
                )));
            }
        }
        Ok(TaskSpec {
            name: file.task,
            fsm,
            states: file.states,
        })
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let file: TaskFile = serde_json::from_str(text).map_err(|e| {
            Error::data(origin, Some(e.line()), format!("invalid task file: {e}"))
        })?;
        TaskSpec::from_file(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TaskSpec::parse(&text, path)
    }

    pub fn mean_durations(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.mean_duration_s).collect()
    }
}

/// Built-in task: `"suturing"` (G1..G9) or `"rious"` (S1..S8).
pub fn default_task(task: &str) -> Result<TaskSpec> {
    let text = match task {
        "suturing" => SUTURING,
        "rious" => RIOUS,
        other => return Err(Error::config(format!("unknown task {other:?}; expected suturing or rious"))),
    };
    TaskSpec::parse(text, Path::new(&format!("<builtin {task}>")))
}

pub fn default_fsm(task: &str) -> Result<TaskFsm> {
    Ok(default_task(task)?.fsm)
}

/// Eight states with the ultrasound-task durations, every state reachable
/// from every other (so no state is implied by its predecessor), and
/// signatures that are modality-exclusive: S4 and S7 only in events, S1 and S2
/// only in vision, the rest only in kinematics. Trials run until `max_frames`.
pub fn modality_exclusive_task() -> TaskSpec {
    let base = default_task("rious").expect("builtin task parses");
    let masks: [&[Modality]; 8] = [
        &[Modality::Vision],
        &[Modality::Vision],
        &[Modality::Kinematics],
        &[Modality::Events],
        &[Modality::Kinematics],
        &[Modality::Kinematics],
        &[Modality::Events],
        &[Modality::Kinematics],
    ];
    let states: Vec<StateEntry> = base
        .states
        .iter()
        .zip(masks)
        .map(|(s, m)| StateEntry {
            modality_mask: m.to_vec(),
            event_pattern: None,
            ..s.clone()
        })
        .collect();
    let names: Vec<String> = states.iter().map(|s| s.name.clone()).collect();
    let mut edges = Vec::new();
    for a in &names {
        for b in names.iter().filter(|b| *b != a) {
            edges.push(EdgeEntry { from: a.clone(), to: b.clone(), p: None });
        }
    }
    TaskSpec::from_file(TaskFile {
        task: "modality-exclusive".into(),
        event_channels: Vec::new(),
        start: names[0].clone(),
        accepting: names.iter().map(|n| (n.clone(), 0.0)).collect(),
        states,
        edges,
    })
    .expect("benchmark task is valid")
}

// ---------------------------------------------------------------- profiles

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Dims {
    pub n_kin: usize,
    pub n_vis: usize,
    pub n_evt: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Dims {
            n_kin: 19,
            n_vis: 32,
            n_evt: 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateProfile {
    pub mean_duration_s: f64,
    pub duration_jitter: f64,
    pub kin_template: Vec<f64>,
    pub vis_centroid: Vec<f64>,
    pub event_pattern: Vec<u8>,
    pub modality_mask: Vec<Modality>,
}

impl StateProfile {
    pub fn shows(&self, m: Modality) -> bool {
        self.modality_mask.contains(&m)
    }
}

/// Per-state profiles plus the confusable signature pools.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileSet {
    pub dims: Dims,
    pub profiles: Vec<StateProfile>,
    pub kin_pool: Vec<Vec<f64>>,
    pub vis_pool: Vec<Vec<f64>>,
    pub evt_pool: Vec<Vec<u8>>,
}

pub const DEFAULT_POOL_SIZE: usize = 3;

fn random_pattern(rng: &mut Rng, n: usize, taken: &[Vec<u8>]) -> Vec<u8> {
    let mut last = Vec::new();
    for _ in 0..256 {
        last = (0..n).map(|_| rng.random_range(0..=1u8)).collect::<Vec<_>>();
        if !taken.contains(&last) {
            break;
        }
    }
    last
}

/// Templates, centroids and pool signatures are standard-normal draws; event
/// patterns come from the task file when given, else random distinct patterns.
pub fn build_profiles(task: &TaskSpec, dims: Dims, pool_size: usize, seed: u64) -> Result<ProfileSet> {
    if dims.n_kin == 0 || dims.n_vis == 0 || dims.n_evt == 0 {
        return Err(Error::config("all stream dimensions must be positive"));
    }
    let mut rng = seed::stream(seed, "simgen/profiles");
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let gauss = |n: usize, rng: &mut Rng| -> Vec<f64> { (0..n).map(|_| normal.sample(rng)).collect() };
    let mut taken: Vec<Vec<u8>> = task
        .states
        .iter()
        .filter_map(|s| s.event_pattern.clone())
        .collect();
    let mut profiles = Vec::with_capacity(task.states.len());
    for s in &task.states {
        let event_pattern = match &s.event_pattern {
            Some(p) if p.len() == dims.n_evt => p.clone(),
            Some(p) => {
                return Err(Error::config(format!(
                    "state {} has a {}-channel event pattern, dims ask for {}",
                    s.name,
                    p.len(),
                    dims.n_evt
                )))
            }
            None => {
                let p = random_pattern(&mut rng, dims.n_evt, &taken);
                taken.push(p.clone());
                p
            }
        };
        profiles.push(StateProfile {
            mean_duration_s: s.mean_duration_s,
            duration_jitter: s.duration_jitter,
            kin_template: gauss(dims.n_kin, &mut rng),
            vis_centroid: gauss(dims.n_vis, &mut rng),
            event_pattern,
            modality_mask: s.modality_mask.clone(),
        });
    }
    let k = pool_size.max(1);
    let kin_pool = (0..k).map(|_| gauss(dims.n_kin, &mut rng)).collect();
    let vis_pool = (0..k).map(|_| gauss(dims.n_vis, &mut rng)).collect();
    let evt_pool = (0..k)
        .map(|_| {
            let p = random_pattern(&mut rng, dims.n_evt, &taken);
            taken.push(p.clone());
            p
        })
        .collect();
    Ok(ProfileSet {
        dims,
        profiles,
        kin_pool,
        vis_pool,
        evt_pool,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub kin_sigma: f64,
    pub vis_sigma: f64,
    pub event_flip_prob: f64,
    /// Vision corruption bursts per minute.
    pub camera_motion_rate: f64,
    /// Peak per-channel amplitude of the within-segment kinematic drift.
    pub kin_drift: f64,
    pub camera_burst_s: f64,
    pub camera_burst_sigma: f64,
}

fn default_burst() -> f64 {
    1.0
}

fn default_burst_sigma() -> f64 {
    3.0
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            kin_sigma: 0.3,
            vis_sigma: 0.3,
            event_flip_prob: 0.02,
            camera_motion_rate: 1.0,
            kin_drift: 0.2,
            camera_burst_s: default_burst(),
            camera_burst_sigma: default_burst_sigma(),
        }
    }
}

impl NoiseSpec {
    pub fn zero() -> Self {
        NoiseSpec {
            kin_sigma: 0.0,
            vis_sigma: 0.0,
            event_flip_prob: 0.0,
            camera_motion_rate: 0.0,
            kin_drift: 0.0,
            camera_burst_s: default_burst(),
            camera_burst_sigma: default_burst_sigma(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("kin_sigma", self.kin_sigma),
            ("vis_sigma", self.vis_sigma),
            ("camera_motion_rate", self.camera_motion_rate),
            ("kin_drift", self.kin_drift),
            ("camera_burst_s", self.camera_burst_s),
            ("camera_burst_sigma", self.camera_burst_sigma),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(0.0..0.5).contains(&self.event_flip_prob) {
            return Err(Error::config(format!(
                "event_flip_prob must lie in [0, 0.5), got {}",
                self.event_flip_prob
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- sampling

/// Dwell time in frames: log-normal with the given mean and coefficient of
/// variation, rounded and floored at one frame.
pub fn dwell_frames(mean_s: f64, jitter: f64, rate_hz: f64, rng: &mut Rng) -> usize {
    let secs = if jitter == 0.0 {
        mean_s
    } else {
        let var = (1.0 + jitter * jitter).ln();
        let mu = mean_s.ln() - var / 2.0;
        LogNormal::new(mu, var.sqrt()).expect("valid log-normal").sample(rng)
    };
    ((secs * rate_hz).round() as usize).max(1)
}

pub fn sample_state_path(
    fsm: &TaskFsm,
    profiles: &[StateProfile],
    sample_rate_hz: f64,
    max_frames: usize,
    rng: &mut Rng,
) -> Result<StateSequence> {
    if profiles.len() != fsm.n_states() {
        return Err(Error::config(format!(
            "{} profiles for {} states",
            profiles.len(),
            fsm.n_states()
        )));
    }
    if max_frames == 0 {
        return Err(Error::config("max_frames must be at least 1"));
    }
    let mut labels = Vec::new();
    let mut s = fsm.start;
    loop {
        let p = &profiles[s];
        let n = dwell_frames(p.mean_duration_s, p.duration_jitter, sample_rate_hz, rng);
        let room = max_frames - labels.len();
        labels.extend(std::iter::repeat_n(s, n.min(room)));
        if labels.len() >= max_frames {
            break;
        }
        let out = &fsm.transitions[s];
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut next = None;
        for &(t, q) in out {
            acc += q;
            if u < acc {
                next = Some(t);
                break;
            }
        }
        match next {
            Some(t) => s = t,
            None if fsm.accepting[s] => break,
            // rounding left a sliver of mass past the last edge
            None => s = out.last().expect("non-accepting state has edges").0,
        }
    }
    Ok(StateSequence::from_labels(labels))
}

pub fn emit_trial(
    path: &StateSequence,
    profiles: &ProfileSet,
    noise: &NoiseSpec,
    sample_rate_hz: f64,
    rng: &mut Rng,
    user_id: &str,
    trial_id: &str,
) -> Result<TrialBundle> {
    noise.validate()?;
    let dims = profiles.dims;
    let t_len = path.len();
    if t_len == 0 {
        return Err(Error::EmptySequence);
    }
    for (s, p) in profiles.profiles.iter().enumerate() {
        if p.kin_template.len() != dims.n_kin || p.vis_centroid.len() != dims.n_vis || p.event_pattern.len() != dims.n_evt {
            return Err(Error::shape(format!("profile {s} does not match stream dimensions")));
        }
    }
    if let Some(&l) = path.labels().iter().find(|&&l| l >= profiles.profiles.len()) {
        return Err(Error::invalid(format!("path visits state {l} without a profile")));
    }
    let mut kin = Matrix::zeros(t_len, dims.n_kin);
    let mut vis = Matrix::zeros(t_len, dims.n_vis);
    let mut evt = Matrix::zeros(t_len, dims.n_evt);
    let kin_noise = Normal::new(0.0, noise.kin_sigma).expect("sigma checked");
    let vis_noise = Normal::new(0.0, noise.vis_sigma).expect("sigma checked");
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    for seg in crate::domain::segment_runs(path.labels())? {
        let p = &profiles.profiles[seg.state];
        let k_sig = if p.shows(Modality::Kinematics) {
            &p.kin_template
        } else {
            &profiles.kin_pool[rng.random_range(0..profiles.kin_pool.len())]
        };
        let v_sig = if p.shows(Modality::Vision) {
            &p.vis_centroid
        } else {
            &profiles.vis_pool[rng.random_range(0..profiles.vis_pool.len())]
        };
        let e_sig = if p.shows(Modality::Events) {
            &p.event_pattern
        } else {
            &profiles.evt_pool[rng.random_range(0..profiles.evt_pool.len())]
        };
        let drift: Vec<f64> = (0..dims.n_kin)
            .map(|_| if noise.kin_drift > 0.0 { noise.kin_drift * unit.sample(rng) } else { 0.0 })
            .collect();
        for i in 0..seg.length {
            let t = seg.start + i;
            // linear ramp from -drift to +drift across the segment
            let phase = if seg.length > 1 { 2.0 * i as f64 / (seg.length - 1) as f64 - 1.0 } else { 0.0 };
            for (c, v) in kin.row_mut(t).iter_mut().enumerate() {
                let n = if noise.kin_sigma > 0.0 { kin_noise.sample(rng) } else { 0.0 };
                *v = k_sig[c] + drift[c] * phase + n;
            }
            for (c, v) in vis.row_mut(t).iter_mut().enumerate() {
                let n = if noise.vis_sigma > 0.0 { vis_noise.sample(rng) } else { 0.0 };
                *v = v_sig[c] + n;
            }
            for (c, v) in evt.row_mut(t).iter_mut().enumerate() {
                let flip = noise.event_flip_prob > 0.0 && rng.random::<f64>() < noise.event_flip_prob;
                *v = f64::from(e_sig[c] ^ u8::from(flip));
            }
        }
    }

    if noise.camera_motion_rate > 0.0 {
        let minutes = t_len as f64 / sample_rate_hz / 60.0;
        let n_bursts = Poisson::new(noise.camera_motion_rate * minutes)
            .map(|d| d.sample(rng) as usize)
            .unwrap_or(0);
        let burst_len = ((noise.camera_burst_s * sample_rate_hz).round() as usize).max(1);
        let burst = Normal::new(0.0, noise.camera_burst_sigma).expect("sigma checked");
        for _ in 0..n_bursts {
            let start = rng.random_range(0..t_len);
            for t in start..(start + burst_len).min(t_len) {
                for v in vis.row_mut(t) {
                    *v = burst.sample(rng);
                }
            }
        }
    }

    TrialBundle::new(
        FeatureSequence::new(kin, sample_rate_hz)?,
        FeatureSequence::new(vis, sample_rate_hz)?,
        FeatureSequence::new(evt, sample_rate_hz)?,
        path.clone(),
        user_id,
        trial_id,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateConfig {
    pub trials: usize,
    pub users: usize,
    pub seed: u64,
    pub sample_rate_hz: f64,
    pub max_frames: usize,
    pub dims: Dims,
    pub noise: NoiseSpec,
    pub pool_size: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            trials: 30,
            users: 5,
            seed: 0,
            sample_rate_hz: 10.0,
            max_frames: 3000,
            dims: Dims::default(),
            noise: NoiseSpec::default(),
            pool_size: DEFAULT_POOL_SIZE,
        }
    }
}

impl GenerateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::config("trials must be at least 1"));
        }
        if self.users == 0 || self.users > self.trials {
            return Err(Error::config(format!(
                "users must lie in 1..={} (one trial per user at least)",
                self.trials
            )));
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(Error::config("sample_rate_hz must be positive"));
        }
        if self.max_frames == 0 {
            return Err(Error::config("max_frames must be at least 1"));
        }
        self.noise.validate()
    }

    /// User of trial `k`: contiguous, equally sized blocks (`u1`, `u2`, ...).
    pub fn user_of(&self, k: usize) -> String {
        format!("u{}", k * self.users / self.trials + 1)
    }
}

/// Generates every trial of a dataset. Trial `k` draws from the named stream
/// `simgen/trial{k}`, so trials are independent of generation order.
pub fn generate_dataset(task: &TaskSpec, cfg: &GenerateConfig) -> Result<(ProfileSet, Vec<TrialBundle>)> {
    cfg.validate()?;
    let profiles = build_profiles(task, cfg.dims, cfg.pool_size, cfg.seed)?;
    let trials = (0..cfg.trials)
        .into_par_iter()
        .map(|k| {
            let mut rng = seed::stream(cfg.seed, &format!("simgen/trial{k}"));
            let path = sample_state_path(&task.fsm, &profiles.profiles, cfg.sample_rate_hz, cfg.max_frames, &mut rng)?;
            emit_trial(
                &path,
                &profiles,
                &cfg.noise,
                cfg.sample_rate_hz,
                &mut rng,
                &cfg.user_of(k),
                &format!("t{k:03}"),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((profiles, trials))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> TaskSpec {
        TaskSpec::from_file(TaskFile {
            task: "chain".into(),
            event_channels: vec![],
            states: vec![
                StateEntry {
                    name: "A".into(),
                    description: String::new(),
                    mean_duration_s: 1.0,
                    duration_jitter: 0.0,
                    event_pattern: Some(vec![1, 0]),
                    modality_mask: all_modalities(),
                },
                StateEntry {
                    name: "B".into(),
                    description: String::new(),
                    mean_duration_s: 1.0,
                    duration_jitter: 0.0,
                    event_pattern: Some(vec![0, 1]),
                    modality_mask: all_modalities(),
                },
            ],
            start: "A".into(),
            accepting: [("B".to_string(), 1.0)].into_iter().collect(),
            edges: vec![EdgeEntry { from: "A".into(), to: "B".into(), p: None }],
        })
        .unwrap()
    }

    #[test]
    fn builtin_tasks() {
        let s = default_task("suturing").unwrap();
        assert_eq!(s.fsm.n_states(), 9);
        let r = default_task("rious").unwrap();
        assert_eq!(r.fsm.n_states(), 8);
        assert_eq!(r.states[0].mean_duration_s, 17.3);
        assert_eq!(r.mean_durations(), vec![17.3, 10.6, 4.1, 1.3, 2.2, 2.3, 8.1, 2.5]);
        assert_eq!(s.mean_durations(), vec![2.2, 3.4, 9.0, 4.5, 3.0, 4.8, 7.7, 3.1, 7.3]);
        assert!(default_task("knot-tying").is_err());
        let b = modality_exclusive_task();
        assert_eq!(b.fsm.n_states(), 8);
        assert!(b.fsm.transitions.iter().all(|o| o.len() == 7));
    }

    #[test]
    fn invalid_fsms_rejected() {
        let mut f: TaskFile = serde_json::from_str(RIOUS).unwrap();
        f.edges.retain(|e| !(e.from == "S2" && e.to == "S3"));
        assert!(TaskSpec::from_file(f).is_err());
        let mut f: TaskFile = serde_json::from_str(RIOUS).unwrap();
        f.edges.push(EdgeEntry { from: "S3".into(), to: "S5".into(), p: Some(0.5) });
        // S3 -> S4 takes the 0.5 left over: still valid
        assert!(TaskSpec::from_file(f.clone()).is_ok());
        f.edges.push(EdgeEntry { from: "S3".into(), to: "S6".into(), p: Some(0.7) });
        assert!(TaskSpec::from_file(f).is_err());
    }

    #[test]
    fn zero_jitter_chain_is_exact() {
        let t = chain();
        let dims = Dims { n_kin: 3, n_vis: 4, n_evt: 2 };
        let prof = build_profiles(&t, dims, 3, 1).unwrap();
        let mut rng = seed::stream(0, "p");
        let path = sample_state_path(&t.fsm, &prof.profiles, 10.0, 1000, &mut rng).unwrap();
        assert_eq!(path.labels(), [vec![0; 10], vec![1; 10]].concat().as_slice());
        let trial = emit_trial(&path, &prof, &NoiseSpec::zero(), 10.0, &mut rng, "u1", "t0").unwrap();
        for t in 0..20 {
            let p = &prof.profiles[path.labels()[t]];
            assert_eq!(trial.kinematics.frame(t), p.kin_template.as_slice());
            assert_eq!(trial.vision.frame(t), p.vis_centroid.as_slice());
            let e: Vec<f64> = p.event_pattern.iter().map(|&b| b as f64).collect();
            assert_eq!(trial.events.frame(t), e.as_slice());
        }
    }

    #[test]
    fn path_is_capped_and_deterministic() {
        let t = default_task("rious").unwrap();
        let prof = build_profiles(&t, Dims::default(), 3, 2).unwrap();
        let a = sample_state_path(&t.fsm, &prof.profiles, 10.0, 50, &mut seed::stream(3, "x")).unwrap();
        let b = sample_state_path(&t.fsm, &prof.profiles, 10.0, 50, &mut seed::stream(3, "x")).unwrap();
        assert_eq!(a, b);
        assert!(a.len() <= 50);
    }

    #[test]
    fn s7_mean_dwell_near_table_value() {
        let t = default_task("rious").unwrap();
        let cfg = GenerateConfig { trials: 30, users: 5, seed: 4, ..Default::default() };
        let (_, trials) = generate_dataset(&t, &cfg).unwrap();
        let mut lens = Vec::new();
        for tr in &trials {
            let segs = crate::domain::segment_runs(tr.labels.labels()).unwrap();
            let last = segs.len() - 1;
            // the final segment may be cut by max_frames
            lens.extend(segs.iter().enumerate().filter(|(i, s)| s.state == 6 && *i != last).map(|(_, s)| s.length));
        }
        let mean = lens.iter().sum::<usize>() as f64 / lens.len() as f64 / 10.0;
        assert!((mean - 8.1).abs() / 8.1 < 0.15, "{mean} over {} segments", lens.len());
    }

    #[test]
    fn probe_grasped_channel_follows_s4() {
        let t = default_task("rious").unwrap();
        let cfg = GenerateConfig { trials: 2, users: 1, seed: 5, noise: NoiseSpec::zero(), ..Default::default() };
        let (_, trials) = generate_dataset(&t, &cfg).unwrap();
        let mut seen = 0;
        for tr in &trials {
            for (i, &l) in tr.labels.labels().iter().enumerate() {
                if l == 3 {
                    assert_eq!(tr.events.frame(i)[4], 1.0);
                    seen += 1;
                }
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn flip_prob_bound_and_counts() {
        let mut n = NoiseSpec::zero();
        n.event_flip_prob = 0.5;
        assert!(n.validate().is_err());
        let t = default_task("rious").unwrap();
        let cfg = GenerateConfig { trials: 30, users: 5, max_frames: 20, ..Default::default() };
        let (_, trials) = generate_dataset(&t, &cfg).unwrap();
        assert_eq!(trials.len(), 30);
        for u in 1..=5 {
            assert_eq!(trials.iter().filter(|tr| tr.user_id == format!("u{u}")).count(), 6);
        }
        let bad = GenerateConfig { trials: 0, ..cfg };
        assert!(generate_dataset(&t, &bad).is_err());
    }

    #[test]
    fn exclusive_states_share_pool_statistics() {
        // S4 shows only in events: its kinematics match pool states such as S1
        let t = modality_exclusive_task();
        let cfg = GenerateConfig { trials: 4, users: 2, max_frames: 2000, ..Default::default() };
        let (prof, trials) = generate_dataset(&t, &cfg).unwrap();
        let own = &prof.profiles[3].kin_template;
        for tr in &trials {
            for (i, &l) in tr.labels.labels().iter().enumerate() {
                if l == 3 {
                    let f = tr.kinematics.frame(i);
                    let d_own: f64 = f.iter().zip(own).map(|(a, b)| (a - b).powi(2)).sum();
                    let d_pool = prof
                        .kin_pool
                        .iter()
                        .map(|p| f.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
                        .fold(f64::INFINITY, f64::min);
                    assert!(d_pool < d_own);
                }
            }
        }
    }
}
