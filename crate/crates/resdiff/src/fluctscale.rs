//! Customized fluctuation scale: per-unit residual variance extracted from
//! FFT-thresholded minor components of the training series, and the signed
//! broadcast tensor Q built from it.

use serde::{Deserialize, Serialize};

use crate::data::SpatioTemporalSeries;
use crate::error::{Error, Result};
use crate::numerics::{reconstruct_masked, rfft, RngStream, Tensor};

pub const DEFAULT_THRESHOLD: f64 = 0.1;

/// Per-unit (and per-channel) residual variances σ²_v, computed from the
/// training split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationScale {
    /// Length V·C, v-major c-minor; all entries ≥ 0.
    pub sigma2: Vec<f64>,
    pub units: usize,
    pub channels: usize,
    pub threshold: f64,
    pub source_len: usize,
    /// Whether the DC bin participated in A_max and the kept set.
    pub include_dc: bool,
}

impl FluctuationScale {
    /// |Q| magnitude per (v, c): σ² for power 2 (literal), σ for power 1.
    pub fn magnitudes(&self, scale_power: u8) -> Vec<f64> {
        match scale_power {
            1 => self.sigma2.iter().map(|&s| s.sqrt()).collect(),
            _ => self.sigma2.clone(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.sigma2.iter().all(|&s| s == 0.0)
    }
}

/// Spectrum analysis of one unit's series: the kept (minor-amplitude) bin
/// set and the population variance of the reconstructed residual.
pub fn analyze_unit(series: &[f64], threshold: f64, include_dc: bool) -> Result<(Vec<usize>, f64)> {
    let spec = rfft(series)?;
    let first = if include_dc { 0 } else { 1 };
    let bins = spec.bins();
    let a_max = spec.amplitudes()[first..]
        .iter()
        .fold(0.0f64, |acc, &a| acc.max(a));
    let kept: Vec<usize> =
        (first..bins).filter(|&k| spec.amplitudes()[k] < threshold * a_max).collect();
    let residual = reconstruct_masked(&spec, &kept)?;
    let n = residual.len() as f64;
    let mean: f64 = residual.iter().sum::<f64>() / n;
    let var: f64 = residual.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Ok((kept, var))
}

/// Compute σ²_v per unit/channel from a (standardized) training series.
pub fn compute_scale(
    train: &SpatioTemporalSeries,
    threshold: f64,
    include_dc: bool,
) -> Result<FluctuationScale> {
    let (t, v, c) = (train.t(), train.v(), train.c());
    if t < 4 {
        return Err(Error::InvalidArgument(format!("scale needs L >= 4, got {t}")));
    }
    let mut sigma2 = Vec::with_capacity(v * c);
    let data = train.values.data();
    for vi in 0..v {
        for ci in 0..c {
            let series: Vec<f64> = (0..t).map(|ti| data[(ti * v + vi) * c + ci]).collect();
            // All-constant unit: spectrum has a single DC component, every
            // non-DC amplitude is 0 but so is A_max; variance falls out 0.
            let (_, var) = analyze_unit(&series, threshold, include_dc)?;
            sigma2.push(var.max(0.0));
        }
    }
    Ok(FluctuationScale { sigma2, units: v, channels: c, threshold, source_len: t, include_dc })
}

/// Signed broadcast tensor Q [B × P × V × C]: each element is ±magnitude
/// with independent fair signs.
pub fn draw_q(
    scale: &FluctuationScale,
    b: usize,
    p: usize,
    scale_power: u8,
    stream: &mut RngStream,
) -> Tensor {
    let mags = scale.magnitudes(scale_power);
    let vc = mags.len();
    let signs = stream.draw_sign(&[b * p * vc]);
    let data: Vec<f64> = signs
        .data()
        .iter()
        .enumerate()
        .map(|(i, &s)| s * mags[i % vc])
        .collect();
    Tensor::from_vec(&[b, p, scale.units, scale.channels], data).expect("q shape")
}
