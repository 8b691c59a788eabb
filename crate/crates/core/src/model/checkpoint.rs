//! Checkpoint layout: `TRAVBEV1`, u32 LE header length, JSON header,
//! little-endian f32 parameters, u32 LE CRC32 over everything before it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, ModelParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TRAVBEV1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    architecture: Architecture,
    seed: u64,
    param_count: usize,
}

pub fn to_bytes(params: &ModelParams) -> Vec<u8> {
    let header = serde_json::to_vec(&Header {
        version: CHECKPOINT_VERSION,
        architecture: params.arch.clone(),
        seed: params.seed,
        param_count: params.params.len(),
    })
    .expect("header serializes");
    let mut buf = Vec::with_capacity(16 + header.len() + params.params.len() * 4);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    for v in &params.params {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelParams> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("missing TRAVBEV1 magic"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let hlen = u32::from_le_bytes(body[8..12].try_into().unwrap()) as usize;
    if 12 + hlen > body.len() {
        return Err(bad("truncated header"));
    }
    let header: Header = serde_json::from_slice(&body[12..12 + hlen]).map_err(|e| bad(&format!("bad header: {e}")))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(bad(&format!(
            "version {} is not supported (expected {CHECKPOINT_VERSION})",
            header.version
        )));
    }
    let block = &body[12 + hlen..];
    if block.len() != header.param_count * 4 {
        return Err(bad("truncated parameter block"));
    }
    if crc32fast::hash(body) != stored {
        return Err(bad("CRC mismatch"));
    }
    header.architecture.validate()?;
    if header.architecture.param_count() != header.param_count {
        return Err(bad("parameter count does not match architecture"));
    }
    let params = block.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(ModelParams {
        arch: header.architecture,
        seed: header.seed,
        params,
    })
}

pub fn save(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Loads a checkpoint and checks it was built for `arch`.
pub fn load_expecting(path: impl AsRef<Path>, arch: &Architecture) -> Result<ModelParams> {
    let params = load(path)?;
    if &params.arch != arch {
        return Err(Error::Config(format!(
            "checkpoint architecture {:?} does not match configured {:?}",
            params.arch, arch
        )));
    }
    Ok(params)
}
