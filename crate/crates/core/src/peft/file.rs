//! Adapter file layout: `b"FIATLORA"`, u32 LE header length, JSON header
//! (config, base hash, seed, pair table), then `A` and `B` of every pair as
//! f64 LE in table order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdapterConfig, AdapterSet, LoraPair, PeftError};
use crate::numcore::Tensor;
use crate::toylm::Linear;

pub const ADAPTER_MAGIC: &[u8; 8] = b"FIATLORA";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct PairEntry {
    layer: usize,
    target: Linear,
    a_shape: Vec<usize>,
    b_shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: AdapterConfig,
    base_hash: String,
    seed: u64,
    pairs: Vec<PairEntry>,
}

fn format_err(e: impl std::fmt::Display) -> PeftError {
    PeftError::Format(e.to_string())
}

pub fn write_adapters<W: Write>(mut w: W, set: &AdapterSet) -> Result<(), PeftError> {
    let header = Header {
        format_version: FORMAT_VERSION,
        config: set.config.clone(),
        base_hash: set.base_hash.clone(),
        seed: set.seed,
        pairs: set
            .pairs
            .iter()
            .map(|p| PairEntry {
                layer: p.layer,
                target: p.target,
                a_shape: p.a.shape().to_vec(),
                b_shape: p.b.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(format_err)?;
    w.write_all(ADAPTER_MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    let mut buf = Vec::with_capacity(set.num_trainable() * 8);
    for t in set.tensors() {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_tensor<R: Read>(r: &mut R, shape: Vec<usize>) -> Result<Tensor, PeftError> {
    let n: usize = shape.iter().product();
    let mut raw = vec![0u8; n * 8];
    r.read_exact(&mut raw)?;
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(Tensor::new(shape, data)?)
}

pub fn read_adapters<R: Read>(mut r: R) -> Result<AdapterSet, PeftError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != ADAPTER_MAGIC {
        return Err(PeftError::Format("bad magic".into()));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json).map_err(format_err)?;
    if header.format_version != FORMAT_VERSION {
        return Err(PeftError::Format(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    let mut pairs = Vec::with_capacity(header.pairs.len());
    for e in header.pairs {
        let a = read_tensor(&mut r, e.a_shape)?;
        let b = read_tensor(&mut r, e.b_shape)?;
        pairs.push(LoraPair {
            layer: e.layer,
            target: e.target,
            a,
            b,
        });
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(PeftError::Format(format!("{} trailing bytes", rest.len())));
    }
    Ok(AdapterSet {
        config: header.config,
        base_hash: header.base_hash,
        seed: header.seed,
        pairs,
    })
}

pub fn save_adapters(path: &Path, set: &AdapterSet) -> Result<(), PeftError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut buf = Vec::new();
    write_adapters(&mut buf, set)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_adapters(path: &Path) -> Result<AdapterSet, PeftError> {
    read_adapters(std::fs::read(path)?.as_slice())
}
