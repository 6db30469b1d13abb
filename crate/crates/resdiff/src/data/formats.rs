use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::series::{Layout, SpatioTemporalSeries};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

const STBIN_MAGIC: &[u8; 4] = b"STB1";

#[derive(Debug, Serialize, Deserialize)]
struct StbinHeader {
    shape: [usize; 3],
    layout: LayoutHeader,
    interval_minutes: u32,
    start_epoch_seconds: i64,
    dtype: String,
    order: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    channels: Option<Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
enum LayoutHeader {
    #[serde(rename = "grid")]
    Grid([usize; 2]),
    #[serde(rename = "graph")]
    Graph(usize),
}

/// Write a series in the stbin container: magic "STB1", little-endian u32
/// header length, UTF-8 JSON header, then T·V·C little-endian f32 values.
pub fn write_stbin(path: &Path, series: &SpatioTemporalSeries) -> Result<()> {
    series.validate()?;
    let header = StbinHeader {
        shape: [series.t(), series.v(), series.c()],
        layout: match &series.layout {
            Layout::Grid { h, w } => LayoutHeader::Grid([*h, *w]),
            Layout::Graph { v, .. } => LayoutHeader::Graph(*v),
        },
        interval_minutes: series.interval_minutes,
        start_epoch_seconds: series.start_epoch_seconds,
        dtype: "f32le".into(),
        order: "TVC".into(),
        channels: if series.channel_names.is_empty() {
            None
        } else {
            Some(series.channel_names.clone())
        },
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| Error::Format(format!("header encode: {e}")))?;
    let mut out = std::fs::File::create(path)?;
    out.write_all(STBIN_MAGIC)?;
    out.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    out.write_all(&header_bytes)?;
    let mut payload = Vec::with_capacity(series.values.len() * 4);
    for &v in series.values.data() {
        payload.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.write_all(&payload)?;
    Ok(())
}

pub fn read_stbin(path: &Path) -> Result<SpatioTemporalSeries> {
    let mut file = std::fs::File::open(path)?;
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)
        .map_err(|_| Error::Format("truncated stbin: missing magic".into()))?;
    if &magic != STBIN_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected STB1")));
    }
    let mut len_bytes = [0u8; 4];
    file.read_exact(&mut len_bytes)
        .map_err(|_| Error::Format("truncated stbin: missing header length".into()))?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes)
        .map_err(|_| Error::Format("truncated stbin: short header".into()))?;
    let header: StbinHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Format(format!("malformed stbin header: {e}")))?;
    if header.dtype != "f32le" {
        return Err(Error::Format(format!("unsupported dtype {}", header.dtype)));
    }
    if header.order != "TVC" {
        return Err(Error::Format(format!("unsupported order {}", header.order)));
    }
    let [t, v, c] = header.shape;
    let expected = t * v * c;
    let mut payload = Vec::new();
    file.read_to_end(&mut payload)?;
    if payload.len() != expected * 4 {
        return Err(Error::Format(format!(
            "payload length {} does not match declared shape {:?} ({} bytes expected)",
            payload.len(),
            header.shape,
            expected * 4
        )));
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let layout = match header.layout {
        LayoutHeader::Grid([h, w]) => {
            if h * w != v {
                return Err(Error::Format(format!("grid {h}x{w} does not cover {v} units")));
            }
            Layout::Grid { h, w }
        }
        LayoutHeader::Graph(n) => {
            if n != v {
                return Err(Error::Format(format!("graph size {n} does not match {v} units")));
            }
            Layout::Graph { v: n, adjacency: None }
        }
    };
    SpatioTemporalSeries::new(
        Tensor::from_vec(&[t, v, c], data)?,
        header.interval_minutes,
        header.start_epoch_seconds,
        layout,
        header.channels.unwrap_or_default(),
    )
}

/// CSV ingestion: header row `t,v,c,value`, dense coverage required.
/// Calendar metadata defaults to hourly steps starting at epoch 0.
pub fn read_csv(path: &Path) -> Result<SpatioTemporalSeries> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == "t,v,c,value" => {}
        other => {
            return Err(Error::Format(format!("expected header 't,v,c,value', got {other:?}")))
        }
    }
    let mut rows = Vec::new();
    let (mut t_max, mut v_max, mut c_max) = (0usize, 0usize, 0usize);
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::Format(format!("line {}: expected 4 fields", lineno + 2)));
        }
        let t: usize = parts[0]
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("line {}: bad t", lineno + 2)))?;
        let v: usize = parts[1]
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("line {}: bad v", lineno + 2)))?;
        let c: usize = parts[2]
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("line {}: bad c", lineno + 2)))?;
        let value: f64 = parts[3]
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("line {}: bad value", lineno + 2)))?;
        if !value.is_finite() {
            return Err(Error::Data(format!("non-finite value at (t={t}, v={v}, c={c})")));
        }
        t_max = t_max.max(t + 1);
        v_max = v_max.max(v + 1);
        c_max = c_max.max(c + 1);
        rows.push((t, v, c, value));
    }
    if rows.is_empty() {
        return Err(Error::Format("csv has no data rows".into()));
    }
    let mut data = vec![f64::NAN; t_max * v_max * c_max];
    let mut seen = vec![false; data.len()];
    for (t, v, c, value) in rows {
        let idx = (t * v_max + v) * c_max + c;
        if seen[idx] {
            return Err(Error::Format(format!("duplicate cell (t={t}, v={v}, c={c})")));
        }
        seen[idx] = true;
        data[idx] = value;
    }
    if let Some(idx) = seen.iter().position(|&s| !s) {
        let (v, c) = (v_max, c_max);
        return Err(Error::Format(format!(
            "csv coverage is not dense: missing cell (t={}, v={}, c={})",
            idx / (v * c),
            (idx / c) % v,
            idx % c
        )));
    }
    SpatioTemporalSeries::new(
        Tensor::from_vec(&[t_max, v_max, c_max], data)?,
        60,
        0,
        Layout::Graph { v: v_max, adjacency: None },
        vec![],
    )
}

/// Dispatch on declared format name.
pub fn load_series(path: &Path, format: &str) -> Result<SpatioTemporalSeries> {
    match format {
        "stbin" => read_stbin(path),
        "csv" => read_csv(path),
        other => Err(Error::InvalidArgument(format!("unknown format {other:?}"))),
    }
}
