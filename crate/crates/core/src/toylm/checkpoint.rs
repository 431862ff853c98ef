//! Checkpoint file layout:
//!
//! ```text
//! b"FIATCKPT"            8-byte magic
//! u32 LE                 header length in bytes
//! header                 UTF-8 JSON: format_version, config, kind, seed,
//!                        merged, params [{name, shape}] in storage order
//! f64 LE × N             every tensor, row-major, in header order
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{param_layout, CheckpointKind, LmError, ModelConfig, ModelParams};
use crate::numcore::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FIATCKPT";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    kind: CheckpointKind,
    seed: u64,
    merged: bool,
    params: Vec<ParamEntry>,
}

pub fn write_checkpoint<W: Write>(mut w: W, params: &ModelParams) -> Result<(), LmError> {
    let layout = param_layout(&params.config);
    let header = Header {
        format_version: FORMAT_VERSION,
        config: params.config,
        kind: params.kind,
        seed: params.seed,
        merged: params.merged,
        params: layout
            .into_iter()
            .map(|(name, shape)| ParamEntry { name, shape })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| LmError::Checkpoint(e.to_string()))?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    let mut buf = Vec::with_capacity(params.num_params() * 8);
    for t in &params.tensors {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ModelParams, LmError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(LmError::Checkpoint("bad magic".into()));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: Header =
        serde_json::from_slice(&json).map_err(|e| LmError::Checkpoint(e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(LmError::Checkpoint(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    header.config.validate()?;
    let layout = param_layout(&header.config);
    if layout.len() != header.params.len()
        || layout
            .iter()
            .zip(&header.params)
            .any(|((n, s), e)| *n != e.name || *s != e.shape)
    {
        return Err(LmError::Checkpoint("parameter table does not match config".into()));
    }
    let mut tensors = Vec::with_capacity(layout.len());
    for (_, shape) in layout {
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 8];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push(Tensor::new(shape, data)?);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(LmError::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    Ok(ModelParams {
        config: header.config,
        kind: header.kind,
        seed: header.seed,
        merged: header.merged,
        tensors,
    })
}

pub fn save_checkpoint(path: &Path, params: &ModelParams) -> Result<(), LmError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, params)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams, LmError> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(bytes.as_slice())
}
