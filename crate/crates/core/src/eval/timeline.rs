//! Per-frame comparison table: ground truth, each model's decision and an
//! error flag per model.

use std::io::Write;
use std::path::Path;

use crate::domain::{StateSequence, StateVocab};
use crate::error::{Error, Result};

pub fn timeline_export<W: Write>(
    mut w: W,
    preds: &[(String, StateSequence)],
    gt: &StateSequence,
    vocab: &StateVocab,
    sample_rate_hz: f64,
) -> Result<()> {
    for (name, p) in preds {
        if p.len() != gt.len() {
            return Err(Error::shape(format!(
                "model {name} has {} frames, ground truth {}",
                p.len(),
                gt.len()
            )));
        }
    }
    let io = |e: std::io::Error| Error::io("<timeline>", e);
    let name_of = |s: usize| -> Result<&str> {
        if s < vocab.len() {
            Ok(vocab.name(s))
        } else {
            Err(Error::invalid(format!("state {s} outside the vocabulary")))
        }
    };
    let mut header = vec!["time".to_string(), "gt".to_string()];
    header.extend(preds.iter().map(|(n, _)| n.clone()));
    header.extend(preds.iter().map(|(n, _)| format!("{n}_error")));
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for t in 0..gt.len() {
        let g = gt.labels()[t];
        let mut row = vec![format!("{}", t as f64 / sample_rate_hz), name_of(g)?.to_string()];
        for (_, p) in preds {
            row.push(name_of(p.labels()[t])?.to_string());
        }
        for (_, p) in preds {
            row.push(u8::from(p.labels()[t] != g).to_string());
        }
        writeln!(w, "{}", row.join(",")).map_err(io)?;
    }
    Ok(())
}

pub fn save_timeline(
    path: &Path,
    preds: &[(String, StateSequence)],
    gt: &StateSequence,
    vocab: &StateVocab,
    sample_rate_hz: f64,
) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    timeline_export(std::io::BufWriter::new(f), preds, gt, vocab, sample_rate_hz)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_and_columns() {
        let vocab = StateVocab::new(["A", "B"]).unwrap();
        let gt = StateSequence::from_labels(vec![0, 0, 1, 1]);
        let preds = vec![
            ("perfect".to_string(), gt.clone()),
            ("off".to_string(), StateSequence::from_labels(vec![0, 1, 1, 1])),
        ];
        let mut buf = Vec::new();
        timeline_export(&mut buf, &preds, &gt, &vocab, 10.0).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "time,gt,perfect,off,perfect_error,off_error");
        assert_eq!(lines.len(), 5);
        for l in &lines {
            assert_eq!(l.split(',').count(), 1 + 2 * 2 + 1);
        }
        let flags = |col: usize| lines[1..].iter().map(|l| l.split(',').nth(col).unwrap()).collect::<String>();
        assert_eq!(flags(4), "0000");
        assert_eq!(flags(5), "0100");
        assert_eq!(lines[2], "0.1,A,A,B,0,1");
        let short = vec![("x".to_string(), StateSequence::from_labels(vec![0]))];
        assert!(timeline_export(Vec::new(), &short, &gt, &vocab, 10.0).is_err());
    }
}
