//! Parameter checkpoints: a plain-text record of named tensors.
//!
//! Values are written with Rust's shortest round-trip float formatting, so a
//! save/load cycle reproduces every parameter bit-exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::tensor::Tensor;
use crate::{Error, Result, TensorMap};

const MAGIC: &str = "iqn-checkpoint v1";

pub fn to_string(params: &TensorMap) -> Result<String> {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    for (name, t) in params {
        t.check_finite(&format!("checkpoint tensor `{name}`"))?;
        if name.contains(char::is_whitespace) {
            return Err(Error::Checkpoint(format!(
                "tensor name `{name}` contains whitespace"
            )));
        }
        write!(out, "tensor {name} {}", t.rank()).unwrap();
        for d in t.shape() {
            write!(out, " {d}").unwrap();
        }
        out.push('\n');
        let mut first = true;
        for v in t.data() {
            if !first {
                out.push(' ');
            }
            write!(out, "{v}").unwrap();
            first = false;
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn from_str(text: &str) -> Result<TensorMap> {
    let mut lines = text.lines();
    match lines.next() {
        Some(l) if l == MAGIC => {}
        other => {
            return Err(Error::Checkpoint(format!(
                "bad header: expected `{MAGIC}`, got {other:?}"
            )))
        }
    }
    let mut params = TensorMap::new();
    while let Some(header) = lines.next() {
        if header.trim().is_empty() {
            continue;
        }
        let mut fields = header.split_whitespace();
        if fields.next() != Some("tensor") {
            return Err(Error::Checkpoint(format!("expected `tensor` line, got `{header}`")));
        }
        let name = fields
            .next()
            .ok_or_else(|| Error::Checkpoint("missing tensor name".into()))?
            .to_string();
        let rank: usize = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Checkpoint(format!("bad rank in `{header}`")))?;
        let shape: Vec<usize> = fields
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::Checkpoint(format!("bad dimension `{s}` in `{header}`")))
            })
            .collect::<Result<_>>()?;
        if shape.len() != rank {
            return Err(Error::Checkpoint(format!(
                "rank {rank} does not match {} dimensions in `{header}`",
                shape.len()
            )));
        }
        let values_line = lines
            .next()
            .ok_or_else(|| Error::Checkpoint(format!("missing values for tensor `{name}`")))?;
        let data: Vec<f64> = values_line
            .split_whitespace()
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::Checkpoint(format!("bad value `{s}` for tensor `{name}`")))
            })
            .collect::<Result<_>>()?;
        let tensor = Tensor::new(shape, data)
            .map_err(|e| Error::Checkpoint(format!("tensor `{name}`: {e}")))?;
        if params.insert(name.clone(), tensor).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor `{name}`")));
        }
    }
    Ok(params)
}

pub fn save(path: &Path, params: &TensorMap) -> Result<()> {
    std::fs::write(path, to_string(params)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<TensorMap> {
    from_str(&std::fs::read_to_string(path)?)
}
