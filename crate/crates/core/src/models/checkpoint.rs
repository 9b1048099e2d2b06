//! Checkpoint container: a plain-text header listing each tensor's name and
//! shape, followed by all values as little-endian `f64` in header order.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};

const MAGIC: &str = "ADSPEECH-CHECKPOINT 1";
const END: &str = "END";

fn corrupt(path: &Path, reason: impl Into<String>) -> Error {
    Error::Corrupt {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn write_checkpoint<W: Write>(out: &mut W, tensors: &[(String, Tensor)]) -> std::io::Result<()> {
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "{}", tensors.len())?;
    for (name, t) in tensors {
        assert!(
            !name.is_empty() && !name.contains(char::is_whitespace),
            "tensor names must be non-empty without whitespace: {name:?}"
        );
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        writeln!(out, "{name} {}", dims.join("x"))?;
    }
    writeln!(out, "{END}")?;
    for (_, t) in tensors {
        out.write_all(&t.to_le_bytes())?;
    }
    Ok(())
}

/// Parses a checkpoint; `path` is only used in error messages.
pub fn read_checkpoint<R: Read>(input: R, path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut reader = BufReader::new(input);
    let mut line = String::new();
    let mut next_line = |reader: &mut BufReader<R>| -> Result<String> {
        line.clear();
        let n = reader
            .read_line(&mut line)
            .map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(corrupt(path, "header ends early"));
        }
        Ok(line.trim_end_matches('\n').to_string())
    };
    if next_line(&mut reader)? != MAGIC {
        return Err(corrupt(path, "missing checkpoint magic line"));
    }
    let count: usize = next_line(&mut reader)?
        .parse()
        .map_err(|_| corrupt(path, "bad tensor count"))?;
    let mut header = Vec::with_capacity(count);
    for _ in 0..count {
        let l = next_line(&mut reader)?;
        let (name, dims) = l
            .split_once(' ')
            .ok_or_else(|| corrupt(path, format!("bad header line {l:?}")))?;
        let shape: Vec<usize> = dims
            .split('x')
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| corrupt(path, format!("bad shape in {l:?}")))?;
        header.push((name.to_string(), shape));
    }
    if next_line(&mut reader)? != END {
        return Err(corrupt(path, "missing end-of-header marker"));
    }
    let mut tensors = Vec::with_capacity(count);
    for (name, shape) in header {
        let numel: usize = shape.iter().product();
        let mut bytes = vec![0u8; numel * 8];
        reader
            .read_exact(&mut bytes)
            .map_err(|_| corrupt(path, format!("data for {name} is truncated")))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|_| corrupt(path, format!("bad shape for {name}")))?;
        tensors.push((name, t));
    }
    let mut rest = [0u8; 1];
    if reader.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(corrupt(path, "trailing bytes after the last tensor"));
    }
    Ok(tensors)
}

/// Every tensor of the store, buffers included, in registration order.
pub fn store_tensors(store: &ParamStore) -> Vec<(String, Tensor)> {
    store
        .iter()
        .map(|(_, p)| (p.name().to_string(), p.value().clone()))
        .collect()
}

pub fn save_checkpoint(store: &ParamStore, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &store_tensors(store)).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint into `store`, which must hold exactly the same names and shapes.
pub fn load_checkpoint(store: &mut ParamStore, path: &Path) -> Result<()> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let tensors = read_checkpoint(file, path)?;
    if tensors.len() != store.len() {
        return Err(corrupt(
            path,
            format!("holds {} tensors, model has {}", tensors.len(), store.len()),
        ));
    }
    for (name, t) in tensors {
        let id = store
            .find(&name)
            .ok_or_else(|| corrupt(path, format!("unknown tensor {name}")))?;
        let slot = store.get_mut(id).value_mut();
        if slot.shape() != t.shape() {
            return Err(Error::dim("load_checkpoint", slot.shape(), t.shape()));
        }
        *slot = t;
    }
    Ok(())
}
