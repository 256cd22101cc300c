//! On-disk datasets: one directory per trial plus a dataset index.
//!
//! ```text
//! data/
//!   index.json            task, vocabulary, trial list
//!   t000/manifest.json    user, sample rate, vocabulary, frame and channel counts
//!   t000/kinematics.csv   k0..k{N-1}, one row per frame
//!   t000/visfeat.csv      v0..v{N-1}
//!   t000/events.csv       e0..e{N-1}, values 0 or 1
//!   t000/labels.csv       frame,state (state by name)
//! ```
//!
//! Reals are written with 17 significant digits, so reading gives back the
//! exact values.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::{FeatureSequence, StateSequence, StateVocab, TrialBundle};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const INDEX_FILE: &str = "index.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const KINEMATICS_FILE: &str = "kinematics.csv";
pub const VISION_FILE: &str = "visfeat.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const LABELS_FILE: &str = "labels.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub trial_id: String,
    pub user_id: String,
    pub dir: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub task: String,
    pub vocab: Vec<String>,
    pub sample_rate_hz: f64,
    pub trials: Vec<IndexEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialManifest {
    pub trial_id: String,
    pub user_id: String,
    pub sample_rate_hz: f64,
    pub vocab: Vec<String>,
    pub n_frames: usize,
    pub kinematics_channels: usize,
    pub vision_channels: usize,
    pub event_channels: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: String,
    pub vocab: StateVocab,
    pub trials: Vec<TrialBundle>,
}

impl Dataset {
    pub fn n_states(&self) -> usize {
        self.vocab.len()
    }
}

/// Scientific notation with 17 significant digits; round-trips every `f64`.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_file(path: &Path, f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn write_matrix(path: &Path, prefix: char, m: &Matrix, binary: bool) -> Result<()> {
    write_file(path, |w| {
        let header: Vec<String> = (0..m.cols()).map(|c| format!("{prefix}{c}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for row in m.iter_rows() {
            let cells: Vec<String> = row
                .iter()
                .map(|&v| if binary { format!("{}", v as u8) } else { format_real(v) })
                .collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("plain data serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn write_trial(dir: &Path, trial: &TrialBundle, vocab: &StateVocab) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if let Some(&l) = trial.labels.labels().iter().find(|&&l| l >= vocab.len()) {
        return Err(Error::invalid(format!("trial {} has label {l} outside the vocabulary", trial.trial_id)));
    }
    write_json(
        &dir.join(MANIFEST_FILE),
        &TrialManifest {
            trial_id: trial.trial_id.clone(),
            user_id: trial.user_id.clone(),
            sample_rate_hz: trial.sample_rate_hz(),
            vocab: vocab.names().to_vec(),
            n_frames: trial.len(),
            kinematics_channels: trial.kinematics.n_features(),
            vision_channels: trial.vision.n_features(),
            event_channels: trial.events.n_features(),
        },
    )?;
    write_matrix(&dir.join(KINEMATICS_FILE), 'k', trial.kinematics.data(), false)?;
    write_matrix(&dir.join(VISION_FILE), 'v', trial.vision.data(), false)?;
    write_matrix(&dir.join(EVENTS_FILE), 'e', trial.events.data(), true)?;
    write_file(&dir.join(LABELS_FILE), |w| {
        writeln!(w, "frame,state")?;
        for (t, &l) in trial.labels.labels().iter().enumerate() {
            writeln!(w, "{t},{}", vocab.name(l))?;
        }
        Ok(())
    })
}

pub fn write_dataset(root: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut entries = Vec::with_capacity(ds.trials.len());
    for t in &ds.trials {
        write_trial(&root.join(&t.trial_id), t, &ds.vocab)?;
        entries.push(IndexEntry {
            trial_id: t.trial_id.clone(),
            user_id: t.user_id.clone(),
            dir: t.trial_id.clone(),
        });
    }
    write_json(
        &root.join(INDEX_FILE),
        &DatasetIndex {
            task: ds.task.clone(),
            vocab: ds.vocab.names().to_vec(),
            sample_rate_hz: ds.trials.first().map_or(0.0, |t| t.sample_rate_hz()),
            trials: entries,
        },
    )
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::data(path, Some(e.line()), e.to_string()))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file))
}

fn record_line(r: &csv::StringRecord) -> Option<usize> {
    r.position().map(|p| p.line() as usize)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize);
    Error::data(path, line, e.to_string())
}

fn read_matrix(path: &Path, cols: usize, rows: usize, binary: bool) -> Result<Matrix> {
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.len() != cols {
        return Err(Error::data(path, Some(1), format!("header has {} columns, manifest says {cols}", header.len())));
    }
    let mut data = Vec::with_capacity(rows * cols);
    let mut n = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = record_line(&rec);
        if rec.len() != cols {
            return Err(Error::data(path, line, format!("expected {cols} values, found {}", rec.len())));
        }
        for field in rec.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::data(path, line, format!("not a number: {field:?}")))?;
            if !v.is_finite() || (binary && v != 0.0 && v != 1.0) {
                return Err(Error::data(
                    path,
                    line,
                    if binary { format!("event value {field:?} is not 0 or 1") } else { format!("non-finite value {field:?}") },
                ));
            }
            data.push(v);
        }
        n += 1;
    }
    if n != rows {
        return Err(Error::data(path, None, format!("{n} frames, manifest says {rows}")));
    }
    Matrix::from_vec(rows, cols, data)
}

fn read_labels(path: &Path, vocab: &StateVocab, rows: usize) -> Result<StateSequence> {
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != ["frame", "state"] {
        return Err(Error::data(path, Some(1), "header must be frame,state"));
    }
    let mut labels = Vec::with_capacity(rows);
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = record_line(&rec);
        let frame: usize = rec[0]
            .parse()
            .map_err(|_| Error::data(path, line, format!("bad frame index {:?}", &rec[0])))?;
        if frame != labels.len() {
            return Err(Error::data(path, line, format!("frame {frame} out of order, expected {}", labels.len())));
        }
        let s = vocab
            .index_of(&rec[1])
            .ok_or_else(|| Error::data(path, line, format!("unknown state {:?}", &rec[1])))?;
        labels.push(s);
    }
    if labels.len() != rows {
        return Err(Error::data(path, None, format!("{} labels, manifest says {rows}", labels.len())));
    }
    Ok(StateSequence::from_labels(labels))
}

pub fn read_trial(dir: &Path) -> Result<(TrialManifest, TrialBundle)> {
    let mpath = dir.join(MANIFEST_FILE);
    let m: TrialManifest = read_json(&mpath)?;
    if !(m.sample_rate_hz > 0.0) {
        return Err(Error::data(&mpath, None, "sample_rate_hz must be positive"));
    }
    let vocab = StateVocab::new(m.vocab.iter().cloned()).map_err(|e| Error::data(&mpath, None, e.to_string()))?;
    let rows = m.n_frames;
    let stream = |file: &str, cols: usize, binary: bool| -> Result<FeatureSequence> {
        let path = dir.join(file);
        FeatureSequence::new(read_matrix(&path, cols, rows, binary)?, m.sample_rate_hz)
            .map_err(|e| Error::data(&path, None, e.to_string()))
    };
    let kin = stream(KINEMATICS_FILE, m.kinematics_channels, false)?;
    let vis = stream(VISION_FILE, m.vision_channels, false)?;
    let evt = stream(EVENTS_FILE, m.event_channels, true)?;
    let labels = read_labels(&dir.join(LABELS_FILE), &vocab, rows)?;
    let trial = TrialBundle::new(kin, vis, evt, labels, m.user_id.clone(), m.trial_id.clone())
        .map_err(|e| Error::data(dir, None, e.to_string()))?;
    Ok((m, trial))
}

pub fn read_dataset(root: &Path) -> Result<Dataset> {
    let ipath = root.join(INDEX_FILE);
    let index: DatasetIndex = read_json(&ipath)?;
    let vocab = StateVocab::new(index.vocab.iter().cloned()).map_err(|e| Error::data(&ipath, None, e.to_string()))?;
    if index.trials.is_empty() {
        return Err(Error::data(&ipath, None, "dataset lists no trials"));
    }
    let mut trials = Vec::with_capacity(index.trials.len());
    for entry in &index.trials {
        let dir: PathBuf = root.join(&entry.dir);
        let (m, t) = read_trial(&dir)?;
        if m.vocab != index.vocab {
            return Err(Error::data(dir.join(MANIFEST_FILE), None, "vocabulary differs from the dataset index"));
        }
        if m.trial_id != entry.trial_id || m.user_id != entry.user_id {
            return Err(Error::data(dir.join(MANIFEST_FILE), None, "trial or user id differs from the dataset index"));
        }
        trials.push(t);
    }
    Ok(Dataset {
        task: index.task,
        vocab,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::{default_task, generate_dataset, GenerateConfig};

    fn small() -> Dataset {
        let task = default_task("rious").unwrap();
        let cfg = GenerateConfig { trials: 3, users: 2, max_frames: 40, ..Default::default() };
        let (_, trials) = generate_dataset(&task, &cfg).unwrap();
        Dataset { task: task.name, vocab: task.fsm.vocab, trials }
    }

    #[test]
    fn round_trip_is_exact() {
        let ds = small();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &ds).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
        let awkward = [0.1, 1.0 / 3.0, f64::MIN_POSITIVE, -1e300, 5e-324, 123456789.123456789];
        for v in awkward {
            assert_eq!(format_real(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }

    #[test]
    fn schema_errors_name_file_and_line() {
        let ds = small();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &ds).unwrap();
        let kin = dir.path().join("t000").join(KINEMATICS_FILE);
        let text = fs::read_to_string(&kin).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[3] = lines[3].replacen(|c: char| c.is_ascii_digit(), "x", 1);
        fs::write(&kin, lines.join("\n") + "\n").unwrap();
        let msg = read_dataset(dir.path()).unwrap_err().to_string();
        assert!(msg.contains("kinematics.csv:4"), "{msg}");

        fs::remove_file(dir.path().join("t001").join(LABELS_FILE)).unwrap();
        fs::write(&kin, text).unwrap();
        let msg = read_dataset(dir.path()).unwrap_err().to_string();
        assert!(msg.contains("labels.csv"), "{msg}");
    }

    #[test]
    fn non_binary_event_rejected() {
        let ds = small();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &ds).unwrap();
        let evt = dir.path().join("t002").join(EVENTS_FILE);
        let text = fs::read_to_string(&evt).unwrap();
        let bad = text.replacen("\n0,", "\n2,", 1).replacen("\n1,", "\n2,", 1);
        fs::write(&evt, bad).unwrap();
        let msg = read_dataset(dir.path()).unwrap_err().to_string();
        assert!(msg.contains("events.csv:"), "{msg}");
    }
}
