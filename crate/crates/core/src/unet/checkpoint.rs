//! QNET1 container: `b"QNET1"`, u32 little-endian header length, JSON
//! topology header, then every parameter tensor as little-endian f32 in the
//! order listed by the header.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{UNet, UNetConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 5] = b"QNET1";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct NormEntry {
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
    momentum: f64,
    epsilon: f64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: UNetConfig,
    tensors: Vec<TensorEntry>,
    batch_norms: Vec<NormEntry>,
}

fn tensor_names(cfg: &UNetConfig) -> Vec<String> {
    let block = |prefix: &str, out: &mut Vec<String>| {
        for b in ["a", "b"] {
            for t in ["conv.weight", "conv.bias", "bn.gamma", "bn.beta"] {
                out.push(format!("{prefix}.{b}.{t}"));
            }
        }
    };
    let mut names = Vec::new();
    let levels = cfg.depth - 1;
    for l in 0..levels {
        block(&format!("enc{l}"), &mut names);
    }
    block("bottleneck", &mut names);
    for l in (0..levels).rev() {
        names.push(format!("up{l}.weight"));
        names.push(format!("up{l}.bias"));
        block(&format!("dec{l}"), &mut names);
    }
    names.push("head.weight".into());
    names.push("head.bias".into());
    names
}

pub fn encode_checkpoint(net: &UNet) -> Vec<u8> {
    let mut net = net.clone();
    let names = tensor_names(&net.config);
    let config = net.config.clone();
    let batch_norms = net
        .batch_norms_mut()
        .into_iter()
        .map(|bn| NormEntry {
            running_mean: bn.running_mean.clone(),
            running_var: bn.running_var.clone(),
            momentum: bn.momentum,
            epsilon: bn.epsilon,
        })
        .collect();
    let params = net.params_mut();
    let tensors = names
        .into_iter()
        .zip(params.iter())
        .map(|(name, p)| TensorEntry { name, len: p.len() })
        .collect();
    let header = serde_json::to_vec(&Header {
        version: FORMAT_VERSION,
        config,
        tensors,
        batch_norms,
    })
    .expect("header serialization cannot fail");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for p in params {
        for v in &p.value {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<UNet> {
    if bytes.len() < 9 || &bytes[..5] != MAGIC {
        return Err(Error::format("magic", "not a QNET1 checkpoint"));
    }
    let hlen = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let body = &bytes[9..];
    if body.len() < hlen {
        return Err(Error::Truncated { expected: hlen, found: body.len() });
    }
    let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| Error::format("header", e.to_string()))?;
    if header.version != FORMAT_VERSION {
        return Err(Error::format("version", format!("unsupported version {}", header.version)));
    }
    let mut net = UNet::<f32>::new(header.config, 0)?;
    let names = tensor_names(&net.config);
    if header.tensors.len() != names.len() {
        return Err(Error::format("tensors", format!("expected {} tensors, found {}", names.len(), header.tensors.len())));
    }
    let payload = &body[hlen..];
    let expected: usize = header.tensors.iter().map(|t| t.len * 4).sum();
    if payload.len() != expected {
        return Err(Error::Truncated { expected, found: payload.len() });
    }
    let mut offset = 0;
    for ((p, entry), name) in net.params_mut().into_iter().zip(&header.tensors).zip(&names) {
        if entry.name != *name || entry.len != p.len() {
            return Err(Error::format("tensors", format!("entry {} ({}) does not fit {name} ({})", entry.name, entry.len, p.len())));
        }
        for v in p.value.iter_mut() {
            *v = f32::from_le_bytes(payload[offset..offset + 4].try_into().expect("4 bytes"));
            offset += 4;
        }
        if p.value.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(name, "non-finite parameter"));
        }
    }
    let bns = net.batch_norms_mut();
    if bns.len() != header.batch_norms.len() {
        return Err(Error::format("batch_norms", format!("expected {}, found {}", bns.len(), header.batch_norms.len())));
    }
    for (bn, e) in bns.into_iter().zip(header.batch_norms) {
        if e.running_mean.len() != bn.channels || e.running_var.len() != bn.channels {
            return Err(Error::format("batch_norms", "channel count mismatch"));
        }
        bn.running_mean = e.running_mean;
        bn.running_var = e.running_var;
        bn.momentum = e.momentum;
        bn.epsilon = e.epsilon;
    }
    Ok(net)
}

pub fn save_checkpoint(path: impl AsRef<Path>, net: &UNet) -> Result<()> {
    fs::write(path, encode_checkpoint(net))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<UNet> {
    decode_checkpoint(&fs::read(path)?)
}
