use statefuse::eval::{run_louo, LouoOptions};
use statefuse::models::{ModelKind, ModelSettings, Mode};
use statefuse::simgen::{default_task, generate_dataset, GenerateConfig};

fn small_settings() -> ModelSettings {
    let mut s = ModelSettings::default();
    s.tcn_train.epochs = 3;
    s.lstm_train.epochs = 2;
    s.lstm.hidden_units = 6;
    s
}

#[test]
fn louo_rows_folds_and_determinism() {
    let task = default_task("rious").unwrap();
    let cfg = GenerateConfig { trials: 6, users: 3, seed: 21, max_frames: 300, ..GenerateConfig::default() };
    let (_, trials) = generate_dataset(&task, &cfg).unwrap();
    let opts = LouoOptions {
        models: vec![ModelKind::TcnKin, ModelKind::Events],
        mode: Mode::NonCausal,
        settings: small_settings(),
        seed: 3,
    };
    let a = run_louo(&trials, 8, &opts).unwrap();
    assert_eq!(a.report.folds.len(), 3);
    for f in &a.report.folds {
        assert_eq!(f.reports.len(), 2);
        assert!(f.fusions.is_empty());
    }
    assert!(a.report.accuracy(ModelKind::FusionKve).is_none());
    assert!(a.report.aggregate.iter().all(|r| r.edit_score.is_some()));
    // every trial is decided exactly once, by the fold that held its user out
    assert_eq!(a.decisions.len(), trials.len());
    let b = run_louo(&trials, 8, &opts).unwrap();
    assert_eq!(
        serde_json::to_string(&a.report).unwrap(),
        serde_json::to_string(&b.report).unwrap()
    );
}

#[test]
fn fusion_rows_and_causal_reports() {
    let task = default_task("suturing").unwrap();
    let cfg = GenerateConfig { trials: 4, users: 2, seed: 5, max_frames: 300, ..GenerateConfig::default() };
    let (_, trials) = generate_dataset(&task, &cfg).unwrap();
    let opts = LouoOptions {
        models: vec![ModelKind::FusionKv],
        mode: Mode::Causal,
        settings: small_settings(),
        seed: 1,
    };
    let out = run_louo(&trials, task.fsm.vocab.len(), &opts).unwrap();
    for f in &out.report.folds {
        let w = &f.fusions["fusion-kv"];
        assert_eq!(w.members, ["tcn-kin", "lstm-kin", "tcn-vis"]);
        for j in 0..w.weights.n_states() {
            let s: f64 = (0..3).map(|i| w.weights.alpha.get(i, j)).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }
    assert!(out.report.aggregate.iter().all(|r| r.edit_score.is_none()));
    assert!(out.report.accuracy(ModelKind::FusionKv).is_some());
}

#[test]
fn louo_needs_two_users() {
    let task = default_task("rious").unwrap();
    let cfg = GenerateConfig { trials: 2, users: 1, seed: 1, max_frames: 200, ..GenerateConfig::default() };
    let (_, trials) = generate_dataset(&task, &cfg).unwrap();
    let opts = LouoOptions {
        models: vec![ModelKind::Events],
        mode: Mode::Causal,
        settings: small_settings(),
        seed: 1,
    };
    assert!(run_louo(&trials, 8, &opts).is_err());
}
