//! Linear noise schedule and the scale-aware forward/reverse formulas.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const DEFAULT_STEPS: usize = 50;
pub const DEFAULT_BETA_FIRST: f64 = 1e-4;
pub const DEFAULT_BETA_LAST: f64 = 0.5;

/// β, α = 1−β, and cumulative ᾱ arrays for an N-step chain. Steps are
/// 1-indexed throughout the public API.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn n_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, n: usize) -> f64 {
        self.betas[n - 1]
    }

    pub fn alpha(&self, n: usize) -> f64 {
        self.alphas[n - 1]
    }

    /// ᾱ_n, with ᾱ_0 = 1 by convention.
    pub fn alpha_bar(&self, n: usize) -> f64 {
        if n == 0 { 1.0 } else { self.alpha_bars[n - 1] }
    }

    /// Reverse-step variance Σ_n = ((1−ᾱ_{n−1})/(1−ᾱ_n))·β_n.
    pub fn posterior_var(&self, n: usize) -> f64 {
        (1.0 - self.alpha_bar(n - 1)) / (1.0 - self.alpha_bar(n)) * self.beta(n)
    }

    pub fn check_step(&self, n: usize) -> Result<()> {
        if n < 1 || n > self.n_steps() {
            return Err(Error::InvalidArgument(format!(
                "diffusion step {n} outside 1..={}",
                self.n_steps()
            )));
        }
        Ok(())
    }
}

/// β linearly spaced from `beta_first` to `beta_last` inclusive; ᾱ by
/// cumulative product.
pub fn build_schedule(n: usize, beta_first: f64, beta_last: f64) -> Result<NoiseSchedule> {
    if n < 1 {
        return Err(Error::InvalidArgument("schedule needs N >= 1".into()));
    }
    if !(0.0 < beta_first && beta_first < beta_last && beta_last < 1.0) && n > 1 {
        return Err(Error::InvalidArgument(format!(
            "need 0 < beta_first < beta_last < 1, got {beta_first}, {beta_last}"
        )));
    }
    if n == 1 && !(0.0 < beta_first && beta_first < 1.0) {
        return Err(Error::InvalidArgument(format!("beta out of (0,1): {beta_first}")));
    }
    let betas: Vec<f64> = if n == 1 {
        vec![beta_first]
    } else {
        (0..n)
            .map(|i| beta_first + (beta_last - beta_first) * i as f64 / (n - 1) as f64)
            .collect()
    };
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(n);
    let mut prod = 1.0;
    for &a in &alphas {
        prod *= a;
        alpha_bars.push(prod);
    }
    Ok(NoiseSchedule { betas, alphas, alpha_bars })
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        build_schedule(DEFAULT_STEPS, DEFAULT_BETA_FIRST, DEFAULT_BETA_LAST)
            .expect("default schedule")
    }
}

fn check_same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::InvalidArgument(format!(
            "{what}: shape {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Scale-aware forward kernel:
/// r_n = √ᾱ_n·r0 + (1−√ᾱ_n)·Q + √(1−ᾱ_n)·ε.
pub fn forward_noise(
    r0: &Tensor,
    q: &Tensor,
    n: usize,
    eps: &Tensor,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    schedule.check_step(n)?;
    check_same_shape(r0, q, "forward_noise r0/Q")?;
    check_same_shape(r0, eps, "forward_noise r0/eps")?;
    let ab = schedule.alpha_bar(n);
    let (c0, cq, ce) = (ab.sqrt(), 1.0 - ab.sqrt(), (1.0 - ab).sqrt());
    let data: Vec<f64> = r0
        .data()
        .iter()
        .zip(q.data())
        .zip(eps.data())
        .map(|((&r, &qv), &e)| c0 * r + cq * qv + ce * e)
        .collect();
    Tensor::from_vec(r0.shape(), data)
}

/// Which coefficient multiplies the (r_n − scaled ε̂) term in the reverse
/// mean: `PerStep` is the standard DDPM 1/√α_n; `Cumulative` is the
/// verbatim 1/√ᾱ_n form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PosteriorMode {
    #[default]
    PerStep,
    Cumulative,
}

impl std::str::FromStr for PosteriorMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<PosteriorMode> {
        match s {
            "per_step" => Ok(PosteriorMode::PerStep),
            "cumulative" => Ok(PosteriorMode::Cumulative),
            other => Err(Error::InvalidArgument(format!(
                "unknown posterior mode {other:?} (per_step | cumulative)"
            ))),
        }
    }
}

/// Reverse mean μ_θ = coeff·(r_n − β_n/√(1−ᾱ_n)·ε̂) + (1 − coeff)·Q.
pub fn posterior_mean(
    r_n: &Tensor,
    eps_hat: &Tensor,
    q: &Tensor,
    n: usize,
    schedule: &NoiseSchedule,
    mode: PosteriorMode,
) -> Result<Tensor> {
    schedule.check_step(n)?;
    check_same_shape(r_n, eps_hat, "posterior_mean r/eps")?;
    check_same_shape(r_n, q, "posterior_mean r/Q")?;
    let coeff = match mode {
        PosteriorMode::PerStep => 1.0 / schedule.alpha(n).sqrt(),
        PosteriorMode::Cumulative => 1.0 / schedule.alpha_bar(n).sqrt(),
    };
    let eps_scale = schedule.beta(n) / (1.0 - schedule.alpha_bar(n)).sqrt();
    let data: Vec<f64> = r_n
        .data()
        .iter()
        .zip(eps_hat.data())
        .zip(q.data())
        .map(|((&r, &e), &qv)| coeff * (r - eps_scale * e) + (1.0 - coeff) * qv)
        .collect();
    Tensor::from_vec(r_n.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    #[test]
    fn default_schedule_spacing_and_endpoints() {
        let s = NoiseSchedule::default();
        assert_eq!(s.n_steps(), 50);
        assert_eq!(s.beta(1), 1e-4);
        assert_eq!(s.beta(50), 0.5);
        let step = (0.5 - 1e-4) / 49.0;
        assert!((s.beta(2) - s.beta(1) - step).abs() < 1e-15);
        assert_eq!(s.alpha_bar(1), 1.0 - 1e-4);
        assert_eq!(s.alpha_bar(1), s.alpha(1));
    }

    #[test]
    fn alpha_bar_matches_product_loop_oracle() {
        let s = NoiseSchedule::default();
        let mut prod = 1.0;
        for n in 1..=50 {
            prod *= 1.0 - s.beta(n);
            assert!((s.alpha_bar(n) - prod).abs() < 1e-15, "n={n}");
        }
    }

    #[test]
    fn schedule_invariants() {
        let s = NoiseSchedule::default();
        for n in 1..50 {
            assert!(s.beta(n) < s.beta(n + 1));
            assert!(s.alpha_bar(n + 1) < s.alpha_bar(n));
            assert!(s.beta(n) > 0.0 && s.beta(n + 1) < 1.0);
        }
        assert!(s.alpha_bar(50) < s.alpha_bar(1));
    }

    #[test]
    fn build_schedule_rejects_bad_ranges() {
        assert!(build_schedule(0, 1e-4, 0.5).is_err());
        assert!(build_schedule(10, 0.5, 1e-4).is_err());
        assert!(build_schedule(10, 0.0, 0.5).is_err());
        assert!(build_schedule(10, 1e-4, 1.0).is_err());
    }

    #[test]
    fn forward_noise_degenerate_paths() {
        let s = NoiseSchedule::default();
        let r0 = Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let zero = Tensor::zeros(&[3]);
        // ε=0, Q=0 → √ᾱ_n·r0.
        let r = forward_noise(&r0, &zero, 7, &zero, &s).unwrap();
        let c = s.alpha_bar(7).sqrt();
        for (out, inp) in r.data().iter().zip(r0.data()) {
            assert!((out - c * inp).abs() < 1e-15);
        }
        // r0=0, ε=0 → (1−√ᾱ_n)·Q, approaching Q at n=N.
        let q = Tensor::from_vec(&[3], vec![2.0, -1.0, 4.0]).unwrap();
        let r = forward_noise(&zero, &q, 50, &zero, &s).unwrap();
        let cq = 1.0 - s.alpha_bar(50).sqrt();
        for (out, qv) in r.data().iter().zip(q.data()) {
            assert!((out - cq * qv).abs() < 1e-15);
            assert!((out - qv).abs() < 1e-3 * qv.abs());
        }
    }

    #[test]
    fn forward_noise_step_range_checked() {
        let s = NoiseSchedule::default();
        let z = Tensor::zeros(&[2]);
        assert!(forward_noise(&z, &z, 0, &z, &s).is_err());
        assert!(forward_noise(&z, &z, 51, &z, &s).is_err());
    }

    #[test]
    fn kernel_composition_matches_closed_form() {
        // Compose r_n = √α_n r_{n−1} + (1−√α_n)Q + √β_n ε_n symbolically,
        // tracking the r0 coefficient, Q coefficient, and total variance.
        let s = NoiseSchedule::default();
        let mut c_r0 = 1.0;
        let mut c_q = 0.0;
        let mut var = 0.0;
        for n in 1..=50 {
            let sa = s.alpha(n).sqrt();
            c_r0 *= sa;
            c_q = sa * c_q + (1.0 - sa);
            var = s.alpha(n) * var + s.beta(n);
            assert!((c_r0 - s.alpha_bar(n).sqrt()).abs() < 1e-14, "r0 coeff at {n}");
            assert!((c_q - (1.0 - s.alpha_bar(n).sqrt())).abs() < 1e-14, "Q coeff at {n}");
            assert!((var - (1.0 - s.alpha_bar(n))).abs() < 1e-12, "variance at {n}");
        }
    }

    #[test]
    fn endpoint_statistics_match_prior() {
        // Mean/std of r_N over many ε draws vs N((1−√ᾱ_N)Q + √ᾱ_N r0, 1−ᾱ_N).
        let s = NoiseSchedule::default();
        let r0 = Tensor::full(&[1], 0.8);
        let q = Tensor::full(&[1], -1.5);
        let mut rng = RngStream::new(3, 0);
        let m = 200_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..m {
            let eps = rng.draw_normal(&[1]);
            let r = forward_noise(&r0, &q, 50, &eps, &s).unwrap();
            sum += r.data()[0];
            sumsq += r.data()[0] * r.data()[0];
        }
        let mean = sum / m as f64;
        let var = sumsq / m as f64 - mean * mean;
        let ab = s.alpha_bar(50);
        let expect_mean = (1.0 - ab.sqrt()) * -1.5 + ab.sqrt() * 0.8;
        assert!((mean - expect_mean).abs() < 0.01, "mean {mean} vs {expect_mean}");
        assert!((var - (1.0 - ab)).abs() < 0.01, "var {var}");
        // ᾱ_N ≈ 0 so the mean sits essentially at Q.
        assert!((expect_mean - -1.5).abs() < 1e-3 * 1.5);
    }

    #[test]
    fn posterior_mean_modes_agree_at_first_step() {
        let s = NoiseSchedule::default();
        let mut rng = RngStream::new(4, 0);
        let r = rng.draw_normal(&[6]);
        let e = rng.draw_normal(&[6]);
        let q = rng.draw_normal(&[6]);
        let a = posterior_mean(&r, &e, &q, 1, &s, PosteriorMode::PerStep).unwrap();
        let b = posterior_mean(&r, &e, &q, 1, &s, PosteriorMode::Cumulative).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn posterior_mean_q_zero_is_standard_ddpm() {
        let s = NoiseSchedule::default();
        let mut rng = RngStream::new(5, 0);
        let r = rng.draw_normal(&[4]);
        let e = rng.draw_normal(&[4]);
        let q = Tensor::zeros(&[4]);
        let n = 17;
        let mu = posterior_mean(&r, &e, &q, n, &s, PosteriorMode::PerStep).unwrap();
        let coeff = 1.0 / s.alpha(n).sqrt();
        let esc = s.beta(n) / (1.0 - s.alpha_bar(n)).sqrt();
        for i in 0..4 {
            let want = coeff * (r.data()[i] - esc * e.data()[i]);
            assert!((mu.data()[i] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn per_step_mode_inverts_exact_noise() {
        // With ε̂ equal to the true forward noise and Q = 0, the per-step
        // posterior mean must equal the analytic DDPM predecessor mean
        // μ̃ = (√ᾱ_{n−1}β_n/(1−ᾱ_n))·r0 + (√α_n(1−ᾱ_{n−1})/(1−ᾱ_n))·r_n.
        let s = NoiseSchedule::default();
        let mut rng = RngStream::new(6, 0);
        for n in [1, 2, 10, 25, 50] {
            let r0 = rng.draw_normal(&[5]);
            let eps = rng.draw_normal(&[5]);
            let q = Tensor::zeros(&[5]);
            let rn = forward_noise(&r0, &q, n, &eps, &s).unwrap();
            let mu = posterior_mean(&rn, &eps, &q, n, &s, PosteriorMode::PerStep).unwrap();
            let ab = s.alpha_bar(n);
            let ab_prev = s.alpha_bar(n - 1);
            let c0 = ab_prev.sqrt() * s.beta(n) / (1.0 - ab);
            let cn = s.alpha(n).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
            for i in 0..5 {
                let want = c0 * r0.data()[i] + cn * rn.data()[i];
                assert!((mu.data()[i] - want).abs() < 1e-12, "n={n}");
            }
        }
    }

    #[test]
    fn posterior_var_endpoints() {
        let s = NoiseSchedule::default();
        // Σ_1 = 0 since ᾱ_0 = 1.
        assert_eq!(s.posterior_var(1), 0.0);
        for n in 2..=50 {
            let sigma = s.posterior_var(n);
            assert!(sigma > 0.0 && sigma < s.beta(n) + 1e-15, "n={n}");
        }
    }

    #[test]
    fn posterior_mode_parses() {
        assert_eq!("per_step".parse::<PosteriorMode>().unwrap(), PosteriorMode::PerStep);
        assert_eq!("cumulative".parse::<PosteriorMode>().unwrap(), PosteriorMode::Cumulative);
        assert!("other".parse::<PosteriorMode>().is_err());
    }
}
