use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

const STD_FLOOR: f64 = 1e-8;

/// Per-channel standardization statistics fitted on training data.
/// Std uses the population denominator and is floored at 1e-8.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Fit over a tensor whose last axis is the channel axis.
    pub fn fit(values: &Tensor) -> Result<ChannelStats> {
        let shape = values.shape();
        if values.is_empty() || shape.is_empty() {
            return Err(Error::InvalidArgument("cannot fit stats on empty tensor".into()));
        }
        let c = *shape.last().unwrap();
        let rows = values.len() / c;
        let mut mean = vec![0.0; c];
        for row in values.data().chunks_exact(c) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= rows as f64;
        }
        let mut var = vec![0.0; c];
        for row in values.data().chunks_exact(c) {
            for ((s, &m), &v) in var.iter_mut().zip(&mean).zip(row) {
                let d = v - m;
                *s += d * d;
            }
        }
        let std: Vec<f64> =
            var.iter().map(|&s| (s / rows as f64).sqrt().max(STD_FLOOR)).collect();
        Ok(ChannelStats { mean, std })
    }

    pub fn apply(&self, values: &Tensor) -> Tensor {
        let c = self.mean.len();
        let mut out = values.clone();
        for row in out.data_mut().chunks_exact_mut(c) {
            for ((v, &m), &s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        out
    }

    pub fn invert(&self, values: &Tensor) -> Tensor {
        let c = self.mean.len();
        let mut out = values.clone();
        for row in out.data_mut().chunks_exact_mut(c) {
            for ((v, &m), &s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * s + m;
            }
        }
        out
    }

    /// Scale-only inverse, for residual quantities that carry no offset.
    pub fn invert_scale(&self, values: &Tensor) -> Tensor {
        let c = self.mean.len();
        let mut out = values.clone();
        for row in out.data_mut().chunks_exact_mut(c) {
            for (v, &s) in row.iter_mut().zip(&self.std) {
                *v *= s;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    #[test]
    fn small_case() {
        let t = Tensor::from_vec(&[3, 1, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let s = ChannelStats::fit(&t).unwrap();
        assert!((s.mean[0] - 2.0).abs() < 1e-12);
        assert!((s.std[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn constant_channel_floored() {
        let t = Tensor::full(&[5, 2, 1], 3.0);
        let s = ChannelStats::fit(&t).unwrap();
        assert_eq!(s.std[0], 1e-8);
    }

    #[test]
    fn apply_invert_round_trip() {
        let mut rng = RngStream::new(3, 0);
        let t = rng.draw_normal(&[20, 4, 3]).map(|v| v * 5.0 + 2.0);
        let s = ChannelStats::fit(&t).unwrap();
        let z = s.apply(&t);
        let back = s.invert(&z);
        for (a, b) in t.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
