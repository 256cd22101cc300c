//! Checkpoint container: a UTF-8 text header followed by raw little-endian
//! `f64` arrays in header order.
//!
//! ```text
//! statefuse-checkpoint v1
//! kind tcn
//! config_hash 3f1c...
//! config {"n_layers":2,...}
//! tensor enc0.w 16 11 19
//! tensor enc0.b 16
//! end
//! <16*11*19 + 16 little-endian f64 values>
//! ```

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::params::Tensor;
use crate::error::{Error, Result};

const MAGIC: &str = "statefuse-checkpoint v1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    /// Serialized model configuration (single-line JSON).
    pub config: String,
    pub tensors: Vec<Tensor>,
}

pub fn config_hash(config: &str) -> String {
    hex::encode(Sha256::digest(config.as_bytes()))
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, config: impl Into<String>, tensors: Vec<Tensor>) -> Self {
        Checkpoint {
            kind: kind.into(),
            config: config.into(),
            tensors,
        }
    }

    pub fn config_hash(&self) -> String {
        config_hash(&self.config)
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        if self.config.contains('\n') || self.kind.contains(char::is_whitespace) {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidInput,
                "checkpoint kind/config must be single tokens/lines",
            ));
        }
        writeln!(w, "{MAGIC}")?;
        writeln!(w, "kind {}", self.kind)?;
        writeln!(w, "config_hash {}", self.config_hash())?;
        writeln!(w, "config {}", self.config)?;
        for t in &self.tensors {
            write!(w, "tensor {}", t.name)?;
            for d in &t.shape {
                write!(w, " {d}")?;
            }
            writeln!(w)?;
        }
        writeln!(w, "end")?;
        let mut buf = Vec::with_capacity(8 * self.tensors.iter().map(|t| t.data.len()).sum::<usize>());
        for t in &self.tensors {
            for v in &t.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)
    }

    pub fn read_from<R: Read>(r: R, origin: &Path) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut line_no = 0usize;
        let mut next_line = |r: &mut BufReader<R>| -> Result<String> {
            let mut s = String::new();
            line_no += 1;
            let n = r.read_line(&mut s).map_err(|e| Error::io(origin, e))?;
            if n == 0 {
                return Err(Error::data(origin, Some(line_no), "unexpected end of header"));
            }
            Ok(s.trim_end_matches('\n').to_string())
        };
        let bad = |line: usize, msg: &str| Error::data(origin, Some(line), msg.to_string());

        if next_line(&mut r)? != MAGIC {
            return Err(bad(1, "not a statefuse checkpoint"));
        }
        let kind = next_line(&mut r)?
            .strip_prefix("kind ")
            .ok_or_else(|| bad(2, "expected `kind`"))?
            .to_string();
        let hash = next_line(&mut r)?
            .strip_prefix("config_hash ")
            .ok_or_else(|| bad(3, "expected `config_hash`"))?
            .to_string();
        let config = next_line(&mut r)?
            .strip_prefix("config ")
            .ok_or_else(|| bad(4, "expected `config`"))?
            .to_string();
        if config_hash(&config) != hash {
            return Err(bad(4, "config hash does not match config"));
        }
        let mut shapes: Vec<(String, Vec<usize>)> = Vec::new();
        let mut line = 4;
        loop {
            let l = next_line(&mut r)?;
            line += 1;
            if l == "end" {
                break;
            }
            let mut parts = l.split_whitespace();
            if parts.next() != Some("tensor") {
                return Err(bad(line, "expected `tensor` or `end`"));
            }
            let name = parts.next().ok_or_else(|| bad(line, "tensor without a name"))?;
            let shape = parts
                .map(|p| p.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad(line, "bad tensor dimension"))?;
            shapes.push((name.to_string(), shape));
        }
        let mut tensors = Vec::with_capacity(shapes.len());
        for (name, shape) in shapes {
            let n: usize = shape.iter().product();
            let mut bytes = vec![0u8; n * 8];
            r.read_exact(&mut bytes)
                .map_err(|_| Error::data(origin, None, format!("truncated data for tensor {name}")))?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(Tensor { name, shape, data });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(|e| Error::io(origin, e))? != 0 {
            return Err(Error::data(origin, None, "trailing bytes after tensor data"));
        }
        Ok(Checkpoint { kind, config, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::read_from(f, path)
    }
}
