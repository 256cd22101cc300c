use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use statefuse::eval::{run_louo, save_timeline, write_reports_csv, LouoOptions, MetricReport};
use statefuse::fusion::{self, FusionModel};
use statefuse::io::{read_dataset, write_dataset, Dataset};
use statefuse::models::{self, Component, ModelKind, Mode, TrainedComponent};
use statefuse::nn::Checkpoint;
use statefuse::simgen::{self, generate_dataset, TaskSpec};
use statefuse::stream::{FrameLayout, StreamingEstimator};
use statefuse::{Error, ProbSeries, Result, StateSequence, StateVocab, TrialBundle};

use crate::config::{CheckpointDirInfo, RunConfig, INFO_FILE};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("plain data serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_csv(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_task(name: &str, file: Option<&Path>) -> Result<TaskSpec> {
    match file {
        Some(p) => TaskSpec::load(p),
        None if name == "modality-exclusive" => Ok(simgen::modality_exclusive_task()),
        None => simgen::default_task(name),
    }
}

pub struct GenerateArgs {
    pub task: String,
    pub task_file: Option<PathBuf>,
    pub trials: Option<usize>,
    pub users: Option<usize>,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn generate(args: GenerateArgs, cfg: &RunConfig) -> Result<()> {
    let task = load_task(&args.task, args.task_file.as_deref())?;
    let mut gen = cfg.generate.clone();
    gen.seed = args.seed;
    if let Some(t) = args.trials {
        gen.trials = t;
    }
    if let Some(u) = args.users {
        gen.users = u;
    }
    let (_, trials) = generate_dataset(&task, &gen)?;
    let ds = Dataset {
        task: task.name.clone(),
        vocab: task.fsm.vocab.clone(),
        trials,
    };
    write_dataset(&args.out, &ds)?;
    info!("wrote {} trials of {} to {}", ds.trials.len(), ds.task, args.out.display());
    Ok(())
}

fn ckpt_path(dir: &Path, kind: ModelKind) -> PathBuf {
    dir.join(format!("{}.ckpt", kind.name()))
}

fn dir_info(ds: &Dataset) -> CheckpointDirInfo {
    let t = &ds.trials[0];
    CheckpointDirInfo {
        task: ds.task.clone(),
        vocab: ds.vocab.names().to_vec(),
        sample_rate_hz: t.sample_rate_hz(),
        n_kin: t.kinematics.n_features(),
        n_vis: t.vision.n_features(),
        n_evt: t.events.n_features(),
    }
}

fn read_info(dir: &Path) -> Result<CheckpointDirInfo> {
    let path = dir.join(INFO_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::data(&path, Some(e.line()), e.to_string()))
}

fn load_component(dir: &Path, kind: ModelKind) -> Result<TrainedComponent> {
    let path = ckpt_path(dir, kind);
    if !path.exists() {
        return Err(Error::config(format!(
            "train components first: {} not found",
            path.display()
        )));
    }
    let model = Component::from_checkpoint(&Checkpoint::load(&path)?)?;
    let expected = match kind {
        ModelKind::TcnKin | ModelKind::TcnVis => matches!(model, Component::Tcn(_)),
        ModelKind::LstmKin => matches!(model, Component::Lstm(_)),
        ModelKind::Events => matches!(model, Component::Events(_)),
        _ => false,
    };
    if !expected {
        return Err(Error::config(format!("{} does not hold a {kind} model", path.display())));
    }
    Ok(TrainedComponent {
        kind,
        model,
        loss_curve: Vec::new(),
    })
}

fn load_fusion(dir: &Path, kind: ModelKind) -> Result<FusionModel> {
    let path = ckpt_path(dir, kind);
    if !path.exists() {
        return Err(Error::config(format!("{} not found; train {kind} first", path.display())));
    }
    FusionModel::from_checkpoint(&Checkpoint::load(&path)?)
}

fn check_dims(c: &TrainedComponent, trial: &TrialBundle) -> Result<()> {
    let m = c.kind.modality().expect("component");
    let have = trial.stream(m).n_features();
    if have != c.model.n_features() {
        return Err(Error::shape(format!(
            "{} checkpoint expects {} {} channels, dataset has {have}",
            c.kind,
            c.model.n_features(),
            m.short_name()
        )));
    }
    Ok(())
}

pub struct TrainArgs {
    pub data: PathBuf,
    pub model: ModelKind,
    pub mode: Mode,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn train(args: TrainArgs, cfg: &RunConfig) -> Result<()> {
    let ds = read_dataset(&args.data)?;
    let refs: Vec<&TrialBundle> = ds.trials.iter().collect();
    create_dir(&args.out)?;
    let b = ds.n_states();
    if args.model.is_fusion() {
        let members = args
            .model
            .members()
            .iter()
            .map(|&k| load_component(&args.out, k))
            .collect::<Result<Vec<_>>>()?;
        for m in &members {
            check_dims(m, &ds.trials[0])?;
        }
        let member_refs: Vec<&TrainedComponent> = members.iter().collect();
        let f = models::fit_fusion(args.model, &member_refs, &refs, b)?;
        f.to_checkpoint().save(&ckpt_path(&args.out, args.model))?;
        f.weights
            .save_csv(&args.out.join(format!("{}_alpha.csv", args.model)), &f.members)?;
        let acc = accuracy_on(&refs, b, |t| {
            let preds = members.iter().map(|m| m.predict(t)).collect::<Result<Vec<_>>>()?;
            Ok(fusion::decide(&fusion::fuse(&preds.iter().collect::<Vec<_>>(), &f.weights)?))
        })?;
        info!("{}: train frame accuracy {acc:.2}%", args.model);
    } else {
        let c = models::train_component(args.model, &refs, b, &cfg.models, args.mode, args.seed)?;
        let ck = c.model.to_checkpoint();
        info!("{}: config hash {}", args.model, ck.config_hash());
        ck.save(&ckpt_path(&args.out, args.model))?;
        write_csv(&args.out.join(format!("{}_loss.csv", args.model)), |w| {
            writeln!(w, "epoch,loss")?;
            for (e, l) in c.loss_curve.iter().enumerate() {
                writeln!(w, "{e},{l}")?;
            }
            Ok(())
        })?;
        let acc = accuracy_on(&refs, b, |t| Ok(c.predict(t)?.decisions()))?;
        info!("{}: train frame accuracy {acc:.2}%", args.model);
    }
    write_json(&args.out.join(INFO_FILE), &dir_info(&ds))
}

fn accuracy_on(
    trials: &[&TrialBundle],
    n_states: usize,
    predict: impl Fn(&TrialBundle) -> Result<StateSequence>,
) -> Result<f64> {
    let preds = trials.iter().map(|t| predict(t)).collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(&StateSequence, &StateSequence)> = preds.iter().zip(trials).map(|(p, t)| (p, &t.labels)).collect();
    Ok(MetricReport::compute("train", &pairs, n_states, false)?.frame_accuracy_pct)
}

pub struct EvalArgs {
    pub data: PathBuf,
    pub models: Vec<ModelKind>,
    pub mode: Mode,
    pub seed: u64,
    pub out: PathBuf,
    pub checkpoints: Option<PathBuf>,
}

pub fn eval(args: EvalArgs, cfg: &RunConfig) -> Result<()> {
    let ds = read_dataset(&args.data)?;
    create_dir(&args.out)?;
    let timelines = args.out.join("timelines");
    create_dir(&timelines)?;
    let alpha_dir = args.out.join("alpha");
    let rate = ds.trials[0].sample_rate_hz();
    let mut rows: Vec<(String, MetricReport)> = Vec::new();
    let decisions = match &args.checkpoints {
        None => {
            let opts = LouoOptions {
                models: args.models.clone(),
                mode: args.mode,
                settings: cfg.models.clone(),
                seed: args.seed,
            };
            let out = run_louo(&ds.trials, ds.n_states(), &opts)?;
            for fold in &out.report.folds {
                for r in &fold.reports {
                    rows.push((fold.user_id.clone(), r.clone()));
                }
                for (name, f) in &fold.fusions {
                    create_dir(&alpha_dir)?;
                    f.weights
                        .save_csv(&alpha_dir.join(format!("{name}_{}.csv", fold.user_id)), &f.members)?;
                }
            }
            for r in &out.report.aggregate {
                rows.push(("all".into(), r.clone()));
            }
            write_json(&args.out.join("report.json"), &out.report)?;
            out.decisions
                .into_iter()
                .map(|d| (d.trial_id, d.per_model))
                .collect::<Vec<_>>()
        }
        Some(dir) => {
            let (reports, decisions) = eval_checkpoints(dir, &ds, &args, &alpha_dir)?;
            write_json(&args.out.join("report.json"), &reports)?;
            rows.extend(reports.into_iter().map(|r| ("checkpoints".to_string(), r)));
            decisions
        }
    };
    write_csv(&args.out.join("report.csv"), |w| {
        let refs: Vec<(String, &MetricReport)> = rows.iter().map(|(s, r)| (s.clone(), r)).collect();
        write_reports_csv(w, &refs)
    })?;
    for (trial_id, per_model) in &decisions {
        let trial = ds.trials.iter().find(|t| &t.trial_id == trial_id).expect("decided trial exists");
        save_timeline(&timelines.join(format!("{trial_id}.csv")), per_model, &trial.labels, &ds.vocab, rate)?;
    }
    for (scope, r) in rows.iter().filter(|(s, _)| s == "all" || s == "checkpoints") {
        match r.edit_score {
            Some(e) => info!("{scope} {}: accuracy {:.2}%, edit {:.2}", r.model, r.frame_accuracy_pct, e),
            None => info!("{scope} {}: accuracy {:.2}%", r.model, r.frame_accuracy_pct),
        }
    }
    Ok(())
}

type Decisions = Vec<(String, Vec<(String, StateSequence)>)>;

fn eval_checkpoints(dir: &Path, ds: &Dataset, args: &EvalArgs, alpha_dir: &Path) -> Result<(Vec<MetricReport>, Decisions)> {
    let needed = models::required_components(&args.models);
    let comps = needed.iter().map(|&k| load_component(dir, k)).collect::<Result<Vec<_>>>()?;
    for c in &comps {
        check_dims(c, &ds.trials[0])?;
        if c.model.n_states() != ds.n_states() {
            return Err(Error::shape(format!(
                "{} checkpoint has {} states, dataset {}",
                c.kind,
                c.model.n_states(),
                ds.n_states()
            )));
        }
        if args.mode.is_causal() && !c.model.is_causal() {
            return Err(Error::config(format!("{} checkpoint is non-causal but --mode is causal", c.kind)));
        }
    }
    let mut fusions = Vec::new();
    for &k in args.models.iter().filter(|k| k.is_fusion()) {
        let f = load_fusion(dir, k)?;
        create_dir(alpha_dir)?;
        f.weights.save_csv(&alpha_dir.join(format!("{k}.csv")), &f.members)?;
        fusions.push((k, f));
    }
    let mut decisions = Vec::new();
    for t in &ds.trials {
        let probs: Vec<(ModelKind, ProbSeries)> =
            comps.iter().map(|c| Ok((c.kind, c.predict(t)?))).collect::<Result<_>>()?;
        let get = |k: ModelKind| &probs.iter().find(|p| p.0 == k).expect("loaded").1;
        let mut per_model = Vec::new();
        for &k in &args.models {
            let seq = if k.is_fusion() {
                let f = &fusions.iter().find(|f| f.0 == k).expect("loaded").1;
                let members: Vec<&ProbSeries> = k.members().iter().map(|&m| get(m)).collect();
                fusion::decide(&fusion::fuse(&members, &f.weights)?)
            } else {
                get(k).decisions()
            };
            per_model.push((k.name().to_string(), seq));
        }
        decisions.push((t.trial_id.clone(), per_model));
    }
    let reports = args
        .models
        .iter()
        .enumerate()
        .map(|(i, k)| {
            let pairs: Vec<(&StateSequence, &StateSequence)> =
                decisions.iter().zip(&ds.trials).map(|(d, t)| (&d.1[i].1, &t.labels)).collect();
            MetricReport::compute(k.name(), &pairs, ds.n_states(), !args.mode.is_causal())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((reports, decisions))
}

pub struct StreamArgs {
    pub checkpoints: PathBuf,
    pub model: ModelKind,
    pub lenient: bool,
}

pub fn infer_stream(args: StreamArgs, input: impl BufRead, mut output: impl Write) -> Result<()> {
    let info = read_info(&args.checkpoints)?;
    let vocab = StateVocab::new(info.vocab.iter().cloned())?;
    let (components, fusion) = if args.model.is_fusion() {
        let comps = args
            .model
            .members()
            .iter()
            .map(|&k| load_component(&args.checkpoints, k))
            .collect::<Result<Vec<_>>>()?;
        (comps, Some(load_fusion(&args.checkpoints, args.model)?))
    } else {
        (vec![load_component(&args.checkpoints, args.model)?], None)
    };
    let layout = FrameLayout {
        n_kin: info.n_kin,
        n_vis: info.n_vis,
        n_evt: info.n_evt,
    };
    let mut est = StreamingEstimator::new(components, fusion, layout)?;
    if est.n_states() != vocab.len() {
        return Err(Error::shape("checkpoint state count differs from the recorded vocabulary"));
    }
    let stdin_path = Path::new("<stdin>");
    let stdout_err = |e| Error::io("<stdout>", e);
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io(stdin_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let frame = match layout.parse_line(&line) {
            Ok(f) => f,
            Err(msg) if args.lenient => {
                warn!("line {}: {msg}; skipped", i + 1);
                continue;
            }
            Err(msg) => return Err(Error::data(stdin_path, Some(i + 1), msg)),
        };
        let (_, state) = est.push(&frame)?;
        writeln!(output, "{}", vocab.name(state)).map_err(stdout_err)?;
        output.flush().map_err(stdout_err)?;
    }
    Ok(())
}
