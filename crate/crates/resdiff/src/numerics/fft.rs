use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// One-sided spectrum of a real series: amplitude and phase per bin
/// k = 0..⌊L/2⌋. Forward transform is unnormalized; the inverse divides by L.
#[derive(Debug, Clone)]
pub struct SpectrumSide {
    amplitudes: Vec<f64>,
    phases: Vec<f64>,
    len: usize,
}

impl SpectrumSide {
    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    /// Length of the originating time series.
    pub fn series_len(&self) -> usize {
        self.len
    }

    /// Number of one-sided bins, ⌊L/2⌋ + 1.
    pub fn bins(&self) -> usize {
        self.amplitudes.len()
    }
}

/// Real-input discrete Fourier transform, one-sided output.
pub fn rfft(series: &[f64]) -> Result<SpectrumSide> {
    let l = series.len();
    if l < 2 {
        return Err(Error::InvalidArgument(format!("rfft needs length >= 2, got {l}")));
    }
    let mut buf: Vec<Complex64> = series.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(l).process(&mut buf);
    let bins = l / 2 + 1;
    let mut amplitudes = Vec::with_capacity(bins);
    let mut phases = Vec::with_capacity(bins);
    for c in buf.iter().take(bins) {
        amplitudes.push(c.norm());
        let mut p = c.arg();
        if p <= -std::f64::consts::PI {
            p = std::f64::consts::PI;
        }
        phases.push(p);
    }
    Ok(SpectrumSide { amplitudes, phases, len: l })
}

/// Inverse transform keeping only the listed one-sided bins (conjugate
/// partners included implicitly). `keep` indices must lie in 0..bins.
pub fn reconstruct_masked(spec: &SpectrumSide, keep: &[usize]) -> Result<Vec<f64>> {
    let l = spec.len;
    let bins = spec.bins();
    let mut full = vec![Complex64::new(0.0, 0.0); l];
    for &k in keep {
        if k >= bins {
            return Err(Error::InvalidArgument(format!(
                "bin index {k} out of range 0..{bins}"
            )));
        }
        let c = Complex64::from_polar(spec.amplitudes[k], spec.phases[k]);
        full[k] = c;
        if k != 0 && !(l % 2 == 0 && k == l / 2) {
            full[l - k] = c.conj();
        }
    }
    FftPlanner::new().plan_fft_inverse(l).process(&mut full);
    Ok(full.iter().map(|c| c.re / l as f64).collect())
}
