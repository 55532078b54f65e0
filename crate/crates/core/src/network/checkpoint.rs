//! Self-describing checkpoint container.
//!
//! ```text
//! magic    8 bytes  "HSVRTXCK"
//! version  u32 LE
//! hlen     u64 LE   length of the JSON header
//! header   hlen bytes of JSON: architecture + tensor table
//! payload  little-endian f32 values, tensors in table order
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{ArchSpec, ConvLayer, ModelParams, CONV_LAYERS};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"HSVRTXCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    dtype: String,
    arch: ArchSpec,
    conv_layers: usize,
    tensors: Vec<TensorEntry>,
}

pub fn to_bytes(params: &ModelParams<f32>) -> Result<Vec<u8>> {
    let mut tensors = Vec::with_capacity(params.layers.len() * 2);
    for l in &params.layers {
        tensors.push(TensorEntry {
            name: format!("{}.weight", l.name),
            shape: vec![l.out_channels, l.in_channels, 3, 3],
        });
        tensors.push(TensorEntry {
            name: format!("{}.bias", l.name),
            shape: vec![l.out_channels],
        });
    }
    let header = serde_json::to_vec(&Header {
        format_version: FORMAT_VERSION,
        dtype: "f32".into(),
        arch: params.spec,
        conv_layers: params.layers.len(),
        tensors,
    })?;
    let mut out = Vec::with_capacity(20 + header.len() + params.num_parameters() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for l in &params.layers {
        for v in l.weight.iter().chain(l.bias.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelParams<f32>> {
    let bad = |msg: &str| Error::Checkpoint(msg.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let header_end = 20usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[20..header_end])?;
    if header.dtype != "f32" {
        return Err(Error::Checkpoint(format!("unsupported dtype {}", header.dtype)));
    }
    header.arch.validate()?;
    if header.conv_layers != CONV_LAYERS {
        return Err(Error::Checkpoint(format!(
            "expected {CONV_LAYERS} conv layers, header declares {}",
            header.conv_layers
        )));
    }

    let mut payload = &bytes[header_end..];
    let mut take = |entry: &TensorEntry, expected: &[usize]| -> Result<Vec<f32>> {
        if entry.shape != expected {
            return Err(Error::Checkpoint(format!(
                "tensor {}: expected shape {:?}, found {:?}",
                entry.name, expected, entry.shape
            )));
        }
        let n: usize = expected.iter().product();
        if payload.len() < n * 4 {
            return Err(Error::Checkpoint(format!("tensor {}: truncated payload", entry.name)));
        }
        let (head, rest) = payload.split_at(n * 4);
        payload = rest;
        Ok(head
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };

    let plan = header.arch.layer_plan();
    let mut entries = header.tensors.iter();
    let mut layers = Vec::with_capacity(plan.len());
    for p in plan {
        let weight_name = format!("{}.weight", p.name);
        let bias_name = format!("{}.bias", p.name);
        let we = entries
            .next()
            .filter(|e| e.name == weight_name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {weight_name}")))?;
        let w = take(we, &[p.out_channels, p.in_channels, 3, 3])?;
        let be = entries
            .next()
            .filter(|e| e.name == bias_name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {bias_name}")))?;
        let b = take(be, &[p.out_channels])?;
        layers.push(ConvLayer {
            name: p.name,
            in_channels: p.in_channels,
            out_channels: p.out_channels,
            relu: p.relu,
            weight: Array2::from_shape_vec((p.out_channels, p.in_channels * 9), w)
                .expect("shape checked"),
            bias: Array1::from_vec(b),
        });
    }
    if entries.next().is_some() || !payload.is_empty() {
        return Err(bad("trailing data after the last tensor"));
    }
    Ok(ModelParams {
        spec: header.arch,
        layers,
    })
}

pub fn save(params: &ModelParams<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(params)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelParams<f32>> {
    let path = path.as_ref();
    from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Loads a checkpoint and checks it was built for `expected`.
pub fn load_compatible(path: impl AsRef<Path>, expected: &ArchSpec) -> Result<ModelParams<f32>> {
    let params = load(path)?;
    if params.spec != *expected {
        return Err(Error::Checkpoint(format!(
            "architecture mismatch: checkpoint has {:?}, expected {:?}",
            params.spec, expected
        )));
    }
    Ok(params)
}
