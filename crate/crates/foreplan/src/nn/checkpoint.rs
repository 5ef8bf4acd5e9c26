//! Checkpoint file format: a plain-text header with one `name dim0 dim1 ...`
//! line per tensor, a blank line, then every tensor's raw little-endian f32
//! data concatenated in header order.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::nn::params::ParamStore;
use crate::nn::tensor::Tensor;
use crate::nn::NnError;

pub fn save_named(
    tensors: impl Iterator<Item = (String, Tensor)>,
    path: &Path,
) -> Result<(), NnError> {
    let entries: BTreeMap<String, Tensor> = tensors.collect();
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (name, t) in &entries {
        let dims: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
        writeln!(file, "{} {}", name, dims.join(" "))?;
    }
    writeln!(file)?;
    for t in entries.values() {
        for v in &t.data {
            file.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_named(path: &Path) -> Result<BTreeMap<String, Tensor>, NnError> {
    let mut reader = BufReader::new(std::fs::File::open(path)?);
    let mut header: Vec<(String, Vec<usize>)> = Vec::new();
    loop {
        let mut line = String::new();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            return Err(NnError::Checkpoint("missing blank separator line".into()));
        }
        let line = line.trim_end_matches(['\n', '\r']);
        if line.is_empty() {
            break;
        }
        let mut parts = line.split_whitespace();
        let name = parts
            .next()
            .ok_or_else(|| NnError::Checkpoint("empty header line".into()))?
            .to_string();
        let shape: Vec<usize> = parts
            .map(|p| {
                p.parse::<usize>()
                    .map_err(|_| NnError::Checkpoint(format!("bad dim in header for {name}")))
            })
            .collect::<Result<_, _>>()?;
        header.push((name, shape));
    }
    let mut out = BTreeMap::new();
    for (name, shape) in header {
        let numel: usize = shape.iter().product();
        let mut bytes = vec![0u8; numel * 4];
        reader.read_exact(&mut bytes).map_err(|_| {
            NnError::Checkpoint(format!("truncated data for {name}"))
        })?;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        out.insert(name, Tensor { shape, data });
    }
    Ok(out)
}

pub fn save_store(store: &ParamStore, path: &Path) -> Result<(), NnError> {
    save_named(
        store.iter_values().map(|(n, t)| (n.to_string(), t.clone())),
        path,
    )
}

/// Load a checkpoint into a fresh store with zeroed gradients.
pub fn load_store(path: &Path) -> Result<ParamStore, NnError> {
    let tensors = load_named(path)?;
    let mut store = ParamStore::new();
    for (name, t) in tensors {
        store.insert(&name, t)?;
    }
    Ok(store)
}
