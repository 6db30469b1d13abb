//! Ensemble forecast container: K sampled trajectories in original data
//! units, with alignment metadata tying each forecast cell back to the
//! source series, plus the ENS1 file format.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SpatioTemporalSeries;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

const ENS_MAGIC: &[u8; 4] = b"ENS1";

/// K forecast samples [B × P × V × C] each. `window_start[b]` is the
/// absolute start index of window b in the originating full series, so
/// forecast cell (b, i) scores the series value at `window_start[b]+m+i`.
#[derive(Debug, Clone)]
pub struct EnsembleForecast {
    pub samples: Vec<Tensor>,
    pub window_start: Vec<usize>,
    pub m: usize,
    pub interval_minutes: u32,
    pub start_epoch_seconds: i64,
    pub seed: u64,
}

impl EnsembleForecast {
    pub fn k(&self) -> usize {
        self.samples.len()
    }

    fn shape(&self) -> &[usize] {
        self.samples[0].shape()
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::InvalidArgument("ensemble needs K >= 1".into()));
        }
        let shape = self.shape().to_vec();
        if shape.len() != 4 || shape[0] != self.window_start.len() {
            return Err(Error::InvalidArgument(format!(
                "sample shape {shape:?} disagrees with {} windows",
                self.window_start.len()
            )));
        }
        for (k, s) in self.samples.iter().enumerate() {
            if s.shape() != shape {
                return Err(Error::InvalidArgument(format!("sample {k} shape mismatch")));
            }
            s.check_finite("ensemble sample")?;
        }
        Ok(())
    }

    /// Samples restacked as [K × B·P·V·C] for the metric suite.
    pub fn as_metric_tensor(&self) -> Result<Tensor> {
        self.validate()?;
        let n = self.samples[0].len();
        let mut data = Vec::with_capacity(self.k() * n);
        for s in &self.samples {
            data.extend_from_slice(s.data());
        }
        Tensor::from_vec(&[self.k(), n], data)
    }

    /// Ground-truth values aligned with the flattened forecast cells,
    /// gathered from the full (unsplit) series.
    pub fn aligned_truth(&self, full: &SpatioTemporalSeries) -> Result<Vec<f64>> {
        self.validate()?;
        let shape = self.shape();
        let (b, p, v, c) = (shape[0], shape[1], shape[2], shape[3]);
        if full.v() != v || full.c() != c {
            return Err(Error::Data(format!(
                "ensemble covers {v}x{c} units/channels, series has {}x{}",
                full.v(),
                full.c()
            )));
        }
        let mut truth = Vec::with_capacity(b * p * v * c);
        for bi in 0..b {
            let target_start = self.window_start[bi] + self.m;
            if target_start + p > full.t() {
                return Err(Error::Data(format!(
                    "window {bi} targets steps {target_start}..{} beyond series length {}",
                    target_start + p,
                    full.t()
                )));
            }
            let off = target_start * v * c;
            truth.extend_from_slice(&full.values.data()[off..off + p * v * c]);
        }
        Ok(truth)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EnsHeader {
    shape: [usize; 5],
    m: usize,
    window_start: Vec<usize>,
    interval_minutes: u32,
    start_epoch_seconds: i64,
    seed: u64,
    dtype: String,
    order: String,
}

/// ENS1 container: magic, little-endian u32 header length, UTF-8 JSON
/// header, then K·B·P·V·C little-endian f32 values.
pub fn write_ensemble(path: &Path, ens: &EnsembleForecast) -> Result<()> {
    ens.validate()?;
    let s = ens.shape();
    let header = EnsHeader {
        shape: [ens.k(), s[0], s[1], s[2], s[3]],
        m: ens.m,
        window_start: ens.window_start.clone(),
        interval_minutes: ens.interval_minutes,
        start_epoch_seconds: ens.start_epoch_seconds,
        seed: ens.seed,
        dtype: "f32le".into(),
        order: "KBPVC".into(),
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| Error::Format(format!("header encode: {e}")))?;
    let mut out = std::fs::File::create(path)?;
    out.write_all(ENS_MAGIC)?;
    out.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    out.write_all(&header_bytes)?;
    let mut payload = Vec::with_capacity(ens.k() * ens.samples[0].len() * 4);
    for sample in &ens.samples {
        for &v in sample.data() {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out.write_all(&payload)?;
    Ok(())
}

pub fn read_ensemble(path: &Path) -> Result<EnsembleForecast> {
    let mut file = std::fs::File::open(path)?;
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)
        .map_err(|_| Error::Format("truncated ensemble: missing magic".into()))?;
    if &magic != ENS_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected ENS1")));
    }
    let mut len_bytes = [0u8; 4];
    file.read_exact(&mut len_bytes)
        .map_err(|_| Error::Format("truncated ensemble: missing header length".into()))?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes)
        .map_err(|_| Error::Format("truncated ensemble: short header".into()))?;
    let header: EnsHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Format(format!("malformed ensemble header: {e}")))?;
    if header.dtype != "f32le" || header.order != "KBPVC" {
        return Err(Error::Format(format!(
            "unsupported encoding {}/{}",
            header.dtype, header.order
        )));
    }
    let [k, b, p, v, c] = header.shape;
    if header.window_start.len() != b {
        return Err(Error::Format("window_start length disagrees with shape".into()));
    }
    let per_sample = b * p * v * c;
    let mut payload = vec![0u8; k * per_sample * 4];
    file.read_exact(&mut payload)
        .map_err(|_| Error::Format("ensemble payload shorter than declared shape".into()))?;
    let mut trailing = [0u8; 1];
    if file.read(&mut trailing)? != 0 {
        return Err(Error::Format("ensemble payload longer than declared shape".into()));
    }
    let mut samples = Vec::with_capacity(k);
    for ki in 0..k {
        let mut data = Vec::with_capacity(per_sample);
        for i in 0..per_sample {
            let off = (ki * per_sample + i) * 4;
            data.push(f32::from_le_bytes(payload[off..off + 4].try_into().unwrap()) as f64);
        }
        samples.push(Tensor::from_vec(&[b, p, v, c], data)?);
    }
    Ok(EnsembleForecast {
        samples,
        window_start: header.window_start,
        m: header.m,
        interval_minutes: header.interval_minutes,
        start_epoch_seconds: header.start_epoch_seconds,
        seed: header.seed,
    })
}
