//! Checkpoint files: `NUCK`, a version byte, a little-endian u32 header
//! length, a JSON header (config and tensor manifest), then raw
//! little-endian f32 data.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arch::{Network, NetworkConfig};
use crate::error::{CheckpointError, NetError, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"NUCK";
pub const VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: [usize; 4],
    /// Byte offset into the data section.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub config: NetworkConfig,
    pub tensors: Vec<ManifestEntry>,
}

pub fn to_bytes(net: &Network<f32>) -> Vec<u8> {
    let mut offset = 0;
    let tensors = net
        .specs()
        .iter()
        .zip(net.tensors())
        .map(|(s, t)| {
            let e = ManifestEntry {
                name: s.name.clone(),
                shape: t.shape(),
                offset,
            };
            offset += 4 * t.len();
            e
        })
        .collect();
    let header = serde_json::to_vec(&Header {
        config: net.config().clone(),
        tensors,
    })
    .expect("header serializes");
    let mut out = Vec::with_capacity(9 + header.len() + offset);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for t in net.tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn split_header(bytes: &[u8]) -> std::result::Result<(Header, &[u8]), CheckpointError> {
    if bytes.len() < 5 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::Version("missing NUCK magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(CheckpointError::Version(format!("version {} (supported: {VERSION})", bytes[4])));
    }
    let len_bytes = bytes.get(5..9).ok_or_else(|| CheckpointError::Truncated("header length".into()))?;
    let len = u32::from_le_bytes(len_bytes.try_into().expect("4 bytes")) as usize;
    let header = bytes
        .get(9..9 + len)
        .ok_or_else(|| CheckpointError::Truncated(format!("header of {len} bytes")))?;
    Ok((serde_json::from_slice(header)?, &bytes[9 + len..]))
}

/// Reads only the header, e.g. to learn a model's object kind.
pub fn read_header(bytes: &[u8]) -> Result<Header> {
    Ok(split_header(bytes)?.0)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Network<f32>> {
    let (header, data) = split_header(bytes)?;
    let mut named = Vec::with_capacity(header.tensors.len());
    let mut expected = 0;
    for e in &header.tensors {
        let n: usize = e.shape.iter().product();
        if e.offset != expected {
            return Err(CheckpointError::Manifest(format!("{} at offset {} instead of {expected}", e.name, e.offset)).into());
        }
        expected += 4 * n;
        let raw = data
            .get(e.offset..e.offset + 4 * n)
            .ok_or_else(|| CheckpointError::Truncated(format!("data of {}", e.name)))?;
        let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        named.push((e.name.clone(), Tensor::from_vec(e.shape, values)?));
    }
    if data.len() != expected {
        return Err(CheckpointError::Manifest(format!("{} trailing bytes", data.len() - expected)).into());
    }
    Network::from_tensors(header.config, named).map_err(|e| match e {
        NetError::InvalidInput(m) => CheckpointError::Manifest(m).into(),
        other => other,
    })
}

pub fn save(net: &Network<f32>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(net)).map_err(CheckpointError::from)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Network<f32>> {
    let bytes = std::fs::read(path).map_err(CheckpointError::from)?;
    from_bytes(&bytes)
}
