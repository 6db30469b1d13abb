use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::nn::tape::ParamSet;

const CKP_MAGIC: &[u8; 4] = b"CKP1";

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CkptHeader {
    params: Vec<ParamEntry>,
    fingerprint: String,
    seed: u64,
    #[serde(default)]
    extra: serde_json::Value,
}

/// Loaded checkpoint: parameters (grads zeroed) plus header metadata.
#[derive(Debug)]
pub struct Checkpoint {
    pub params: ParamSet,
    pub fingerprint: String,
    pub seed: u64,
    pub extra: serde_json::Value,
}

/// Persist parameters: magic "CKP1", little-endian u32 header length, JSON
/// header listing names/shapes in parameter order, then f32le payloads.
///
/// Persisted precision is f32, so in-memory values are quantized to f32 as
/// part of saving; save → load → forward is then value-identical.
pub fn save_checkpoint(
    path: &Path,
    params: &mut ParamSet,
    fingerprint: &str,
    seed: u64,
    extra: serde_json::Value,
) -> Result<()> {
    let header = CkptHeader {
        params: params
            .iter()
            .map(|p| ParamEntry { name: p.name.clone(), shape: p.value.shape().to_vec() })
            .collect(),
        fingerprint: fingerprint.to_string(),
        seed,
        extra,
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| Error::Format(format!("header encode: {e}")))?;
    let mut out = std::fs::File::create(path)?;
    out.write_all(CKP_MAGIC)?;
    out.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    out.write_all(&header_bytes)?;
    let mut payload = Vec::new();
    for p in params.iter_mut() {
        for v in p.value.data_mut() {
            let q = *v as f32;
            *v = q as f64;
            payload.extend_from_slice(&q.to_le_bytes());
        }
    }
    out.write_all(&payload)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut file = std::fs::File::open(path)?;
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)
        .map_err(|_| Error::Format("truncated checkpoint: missing magic".into()))?;
    if &magic != CKP_MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let mut len_bytes = [0u8; 4];
    file.read_exact(&mut len_bytes)
        .map_err(|_| Error::Format("truncated checkpoint header length".into()))?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes)
        .map_err(|_| Error::Format("truncated checkpoint header".into()))?;
    let header: CkptHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Format(format!("malformed checkpoint header: {e}")))?;
    let mut payload = Vec::new();
    file.read_to_end(&mut payload)?;
    let expected: usize = header.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
    if payload.len() != expected * 4 {
        return Err(Error::Format(format!(
            "checkpoint payload {} bytes, header declares {}",
            payload.len(),
            expected * 4
        )));
    }
    let mut params = ParamSet::new();
    let mut offset = 0;
    for entry in &header.params {
        let n: usize = entry.shape.iter().product();
        let data: Vec<f64> = payload[offset..offset + n * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        offset += n * 4;
        params.add(&entry.name, Tensor::from_vec(&entry.shape, data)?);
    }
    Ok(Checkpoint { params, fingerprint: header.fingerprint, seed: header.seed, extra: header.extra })
}
