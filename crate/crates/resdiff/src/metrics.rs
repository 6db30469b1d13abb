//! Deterministic (MAE, RMSE) and probabilistic (CRPS, QICE, interval
//! score, PICP, PIT) evaluation over ensemble forecasts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{RngStream, Tensor};

/// Empirical quantile with linear interpolation between order statistics.
/// `sorted` must be ascending.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let k = sorted.len();
    if k == 1 {
        return sorted[0];
    }
    let h = (k - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= k {
        sorted[k - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Empirical CRPS of one point: (1/K)Σ|x_k−y| − (1/(2K²))ΣΣ|x_i−x_j|.
pub fn crps_point(sorted: &[f64], y: f64) -> f64 {
    let k = sorted.len() as f64;
    let term1: f64 = sorted.iter().map(|&x| (x - y).abs()).sum::<f64>() / k;
    let mut pairs = 0.0;
    for (j, &x) in sorted.iter().enumerate() {
        pairs += (2.0 * j as f64 - k + 1.0) * x;
    }
    term1 - pairs / (k * k)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricOptions {
    pub m_qis: usize,
    pub alpha_ci: f64,
    /// Nominal central coverage levels for the PICP curve.
    pub picp_levels: Vec<f64>,
    /// Use the ensemble median instead of the mean as the point forecast.
    pub use_median: bool,
    /// Seed for PIT tie randomization.
    pub pit_seed: u64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            m_qis: 10,
            alpha_ci: 0.1,
            picp_levels: (1..=19).map(|i| i as f64 * 0.05).collect(),
            use_median: false,
            pit_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub mae: f64,
    pub rmse: f64,
    /// Sum of per-point CRPS values.
    pub crps_raw: f64,
    /// Σ CRPS / Σ |y|.
    pub crps_norm: f64,
    pub qice: f64,
    pub is: f64,
    /// (nominal level, empirical coverage) pairs.
    pub picp: Vec<(f64, f64)>,
    /// 10-bin PIT histogram (fractions summing to 1).
    pub pit_hist: Vec<f64>,
    /// Empirical CDF of PIT values at the histogram bin edges.
    pub pit_cdf: Vec<(f64, f64)>,
    pub k: usize,
    pub points: usize,
    /// K = 1: CRPS degenerates to absolute error.
    pub degenerate_k: bool,
}

fn check_shapes(samples: &Tensor, truth: &[f64]) -> Result<(usize, usize)> {
    let shape = samples.shape();
    if shape.is_empty() || shape[0] == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let k = shape[0];
    let n = samples.len() / k;
    if truth.len() != n {
        return Err(Error::InvalidArgument(format!(
            "truth has {} points, ensemble covers {n}",
            truth.len()
        )));
    }
    Ok((k, n))
}

/// Point-forecast errors of the ensemble mean (or median).
pub fn mae_rmse(samples: &Tensor, truth: &[f64], use_median: bool) -> Result<(f64, f64)> {
    let (k, n) = check_shapes(samples, truth)?;
    let mut abs = 0.0;
    let mut sq = 0.0;
    let mut buf = vec![0.0; k];
    for (i, &y) in truth.iter().enumerate() {
        let point = if use_median {
            for (s, b) in buf.iter_mut().enumerate() {
                *b = samples.data()[s * n + i];
            }
            buf.sort_by(f64::total_cmp);
            quantile(&buf, 0.5)
        } else {
            (0..k).map(|s| samples.data()[s * n + i]).sum::<f64>() / k as f64
        };
        let e = point - y;
        abs += e.abs();
        sq += e * e;
    }
    Ok((abs / n as f64, (sq / n as f64).sqrt()))
}

/// (sum of per-point CRPS, normalized by Σ|y|, K==1 flag).
pub fn crps(samples: &Tensor, truth: &[f64]) -> Result<(f64, f64, bool)> {
    let (k, n) = check_shapes(samples, truth)?;
    let mut total = 0.0;
    let mut buf = vec![0.0; k];
    for (i, &y) in truth.iter().enumerate() {
        for (s, b) in buf.iter_mut().enumerate() {
            *b = samples.data()[s * n + i];
        }
        buf.sort_by(f64::total_cmp);
        total += crps_point(&buf, y);
    }
    let denom: f64 = truth.iter().map(|y| y.abs()).sum();
    let norm = if denom > 0.0 { total / denom } else { f64::NAN };
    Ok((total, norm, k == 1))
}

/// Quantile interval coverage error over M equal quantile intervals.
/// Interval bounds at levels m/M; inclusive indicators at both ends.
pub fn qice(samples: &Tensor, truth: &[f64], m_qis: usize) -> Result<f64> {
    let (k, n) = check_shapes(samples, truth)?;
    if k < m_qis {
        return Err(Error::InvalidArgument(format!("QICE needs K >= {m_qis}, got {k}")));
    }
    let mut counts = vec![0usize; m_qis];
    let mut buf = vec![0.0; k];
    for (i, &y) in truth.iter().enumerate() {
        for (s, b) in buf.iter_mut().enumerate() {
            *b = samples.data()[s * n + i];
        }
        buf.sort_by(f64::total_cmp);
        for m in 0..m_qis {
            let low = quantile(&buf, m as f64 / m_qis as f64);
            let high = quantile(&buf, (m + 1) as f64 / m_qis as f64);
            if y >= low && y <= high {
                counts[m] += 1;
            }
        }
    }
    let target = 1.0 / m_qis as f64;
    let qice = counts
        .iter()
        .map(|&c| (c as f64 / n as f64 - target).abs())
        .sum::<f64>()
        / m_qis as f64;
    Ok(qice)
}

/// Interval score at central level 1−α: width plus (2/α)-scaled penalties
/// for truths outside the interval. Mean over points.
pub fn interval_score(samples: &Tensor, truth: &[f64], alpha: f64) -> Result<f64> {
    let (k, n) = check_shapes(samples, truth)?;
    let mut total = 0.0;
    let mut buf = vec![0.0; k];
    for (i, &y) in truth.iter().enumerate() {
        for (s, b) in buf.iter_mut().enumerate() {
            *b = samples.data()[s * n + i];
        }
        buf.sort_by(f64::total_cmp);
        let l = quantile(&buf, alpha / 2.0);
        let u = quantile(&buf, 1.0 - alpha / 2.0);
        let mut score = u - l;
        if y < l {
            score += 2.0 / alpha * (l - y);
        }
        if y > u {
            score += 2.0 / alpha * (y - u);
        }
        total += score;
    }
    Ok(total / n as f64)
}

/// Empirical coverage of central prediction intervals at each nominal level.
pub fn picp_curve(samples: &Tensor, truth: &[f64], levels: &[f64]) -> Result<Vec<f64>> {
    let (k, n) = check_shapes(samples, truth)?;
    let mut covered = vec![0usize; levels.len()];
    let mut buf = vec![0.0; k];
    for (i, &y) in truth.iter().enumerate() {
        for (s, b) in buf.iter_mut().enumerate() {
            *b = samples.data()[s * n + i];
        }
        buf.sort_by(f64::total_cmp);
        for (li, &level) in levels.iter().enumerate() {
            let l = quantile(&buf, (1.0 - level) / 2.0);
            let u = quantile(&buf, (1.0 + level) / 2.0);
            if y >= l && y <= u {
                covered[li] += 1;
            }
        }
    }
    Ok(covered.iter().map(|&c| c as f64 / n as f64).collect())
}

/// Probability integral transform per point: rank of y among the samples
/// (ties randomized) over K+1, capped at K/(K+1).
pub fn pit(samples: &Tensor, truth: &[f64], rng: &mut RngStream) -> Result<Vec<f64>> {
    let (k, n) = check_shapes(samples, truth)?;
    let mut out = Vec::with_capacity(n);
    for (i, &y) in truth.iter().enumerate() {
        let mut below = 0usize;
        let mut ties = 0usize;
        for s in 0..k {
            let x = samples.data()[s * n + i];
            if x < y {
                below += 1;
            } else if x == y {
                ties += 1;
            }
        }
        let mut rank = below + 1;
        if ties > 0 {
            rank += rng.draw_uniform_int(ties as u64 + 1) as usize;
        }
        out.push(rank.min(k) as f64 / (k + 1) as f64);
    }
    Ok(out)
}

pub fn pit_histogram(pits: &[f64], bins: usize) -> Vec<f64> {
    let mut hist = vec![0.0; bins];
    for &p in pits {
        let b = ((p * bins as f64) as usize).min(bins - 1);
        hist[b] += 1.0;
    }
    for h in &mut hist {
        *h /= pits.len() as f64;
    }
    hist
}

/// Full metric suite over an ensemble [K × …] against flattened truths.
pub fn evaluate(samples: &Tensor, truth: &[f64], opts: &MetricOptions) -> Result<MetricReport> {
    let (k, n) = check_shapes(samples, truth)?;
    let (mae, rmse) = mae_rmse(samples, truth, opts.use_median)?;
    let (crps_raw, crps_norm, degenerate_k) = crps(samples, truth)?;
    let qice_val = if k >= opts.m_qis { qice(samples, truth, opts.m_qis)? } else { f64::NAN };
    let is = interval_score(samples, truth, opts.alpha_ci)?;
    let coverage = picp_curve(samples, truth, &opts.picp_levels)?;
    let mut pit_rng = RngStream::new(opts.pit_seed, 0x504954); // "PIT"
    let pits = pit(samples, truth, &mut pit_rng)?;
    let pit_hist = pit_histogram(&pits, 10);
    let mut sorted_pits = pits.clone();
    sorted_pits.sort_by(f64::total_cmp);
    let pit_cdf: Vec<(f64, f64)> = (1..=10)
        .map(|b| {
            let edge = b as f64 / 10.0;
            let count = sorted_pits.partition_point(|&p| p <= edge);
            (edge, count as f64 / pits.len() as f64)
        })
        .collect();
    Ok(MetricReport {
        mae,
        rmse,
        crps_raw,
        crps_norm,
        qice: qice_val,
        is,
        picp: opts.picp_levels.iter().copied().zip(coverage).collect(),
        pit_hist,
        pit_cdf,
        k,
        points: n,
        degenerate_k,
    })
}
