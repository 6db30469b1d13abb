//! Stage-2 training: ε-prediction loss on mean-model residuals, with
//! CRPS-based early stopping over a small validation ensemble.

use crate::data::windows::{assemble_batch, window_starts, WindowBatch};
use crate::data::SpatioTemporalSeries;
use crate::diffusion::denoiser::{Denoiser, NoisePredictor};
use crate::diffusion::sampler::sample_residuals;
use crate::diffusion::schedule::{NoiseSchedule, PosteriorMode};
use crate::error::{Error, Result};
use crate::fluctscale::{draw_q, FluctuationScale};
use crate::mean::{unit_rows, MeanModel};
use crate::metrics::crps_point;
use crate::nn::{AdamState, Tape};
use crate::numerics::{RngStream, Tensor};
use crate::training::{shuffled_indices, EarlyStopping, EpochRecord, TrainConfig};

/// Stream tags inside one training seed.
const TAG_STAGE2: u64 = 0x545232; // stage-2 root
const TAG_VAL: u64 = 0x56414c; // validation sampling

#[derive(Debug, Clone)]
pub struct Stage2Config {
    pub train: TrainConfig,
    /// Ensemble size for the validation CRPS (paper: 3).
    pub val_samples: usize,
    pub scale_power: u8,
    pub mode: PosteriorMode,
    /// Evaluate at most this many validation windows (stride P tiling).
    pub val_window_cap: Option<usize>,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Stage2Config {
            train: TrainConfig::default(),
            val_samples: 3,
            scale_power: 2,
            mode: PosteriorMode::PerStep,
            val_window_cap: None,
        }
    }
}

/// One noised training batch in per-unit row layout.
pub struct NoisedBatch {
    pub x_co_rows: Tensor,
    pub r_rows: Tensor,
    pub q_rows: Tensor,
    pub eps_rows: Tensor,
    pub steps: Vec<usize>,
    pub tod: Vec<usize>,
    pub dow: Vec<usize>,
}

/// Draw n ~ Uniform{1..N}, fresh Q and ε, and noise the residual targets
/// through the forward kernel.
pub fn make_noised(
    batch: &WindowBatch,
    r0: &Tensor,
    scale: &FluctuationScale,
    schedule: &NoiseSchedule,
    scale_power: u8,
    stream: &mut RngStream,
) -> Result<NoisedBatch> {
    let shape = r0.shape();
    let (b, p) = (shape[0], shape[1]);
    if batch.batch_size() != b {
        return Err(Error::InvalidArgument("residual/batch size mismatch".into()));
    }
    let steps: Vec<usize> =
        (0..b).map(|_| 1 + stream.draw_uniform_int(schedule.n_steps() as u64) as usize).collect();
    let q = draw_q(scale, b, p, scale_power, stream);
    let eps = stream.draw_normal(shape);
    let per_window = r0.len() / b;
    let mut noised = vec![0.0; r0.len()];
    for (bi, &n) in steps.iter().enumerate() {
        let ab = schedule.alpha_bar(n);
        let (c0, cq, ce) = (ab.sqrt(), 1.0 - ab.sqrt(), (1.0 - ab).sqrt());
        for i in bi * per_window..(bi + 1) * per_window {
            noised[i] = c0 * r0.data()[i] + cq * q.data()[i] + ce * eps.data()[i];
        }
    }
    let m = batch.tod_index[0].len() - p;
    Ok(NoisedBatch {
        x_co_rows: unit_rows(&batch.x_co),
        r_rows: unit_rows(&Tensor::from_vec(shape, noised)?),
        q_rows: unit_rows(&q),
        eps_rows: unit_rows(&eps),
        steps,
        tod: batch.tod_index.iter().map(|w| w[m - 1]).collect(),
        dow: batch.dow_index.iter().map(|w| w[m - 1]).collect(),
    })
}

/// ε-prediction MSE on one freshly noised batch; `r0` are the residual
/// targets produced by the frozen mean model.
pub fn diffusion_loss(
    predictor: &dyn NoisePredictor,
    batch: &WindowBatch,
    r0: &Tensor,
    scale: &FluctuationScale,
    schedule: &NoiseSchedule,
    scale_power: u8,
    stream: &mut RngStream,
) -> Result<f64> {
    let nb = make_noised(batch, r0, scale, schedule, scale_power, stream)?;
    let eps_hat =
        predictor.predict_noise(&nb.x_co_rows, &nb.r_rows, &nb.q_rows, &nb.steps, &nb.tod, &nb.dow)?;
    let mse = eps_hat
        .data()
        .iter()
        .zip(nb.eps_rows.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / eps_hat.len() as f64;
    Ok(mse)
}

/// Mean per-point CRPS of mean + sampled residuals against the target
/// windows, on the standardized scale.
#[allow(clippy::too_many_arguments)]
pub fn eval_val_crps(
    predictor: &dyn NoisePredictor,
    mean_model: &MeanModel,
    val: &SpatioTemporalSeries,
    scale: &FluctuationScale,
    schedule: &NoiseSchedule,
    cfg: &Stage2Config,
    batch_size: usize,
    stream: &RngStream,
) -> Result<f64> {
    let (m, p) = (mean_model.cfg.m, mean_model.cfg.p);
    let mut set = window_starts(val, m, p, p)?;
    if let Some(cap) = cfg.val_window_cap {
        set.starts.truncate(cap);
    }
    let n = set.starts.len();
    let k = cfg.val_samples;
    let mut total = 0.0;
    let mut points = 0usize;
    let mut buf = vec![0.0; k];
    for chunk in (0..n).collect::<Vec<_>>().chunks(batch_size) {
        let batch = assemble_batch(val, &set, chunk);
        let mean = mean_model.predict_mean(&batch)?;
        let residuals = sample_residuals(
            predictor,
            &batch,
            scale,
            schedule,
            k,
            cfg.scale_power,
            cfg.mode,
            stream,
        )?;
        for i in 0..mean.len() {
            for (s, r) in buf.iter_mut().zip(&residuals) {
                *s = mean.data()[i] + r.data()[i];
            }
            buf.sort_by(f64::total_cmp);
            total += crps_point(&buf, batch.x_ta.data()[i]);
        }
        points += mean.len();
    }
    if points == 0 {
        return Err(Error::InvalidArgument("validation split yields no windows".into()));
    }
    Ok(total / points as f64)
}

/// Stage-2 training against a frozen mean model. Both series must already
/// be standardized with the training statistics. The denoiser ends at its
/// best-validation-CRPS weights.
pub fn train_stage2(
    denoiser: &mut Denoiser,
    mean_model: &MeanModel,
    train: &SpatioTemporalSeries,
    val: &SpatioTemporalSeries,
    scale: &FluctuationScale,
    schedule: &NoiseSchedule,
    cfg: &Stage2Config,
    seed: u64,
) -> Result<Vec<EpochRecord>> {
    let (m, p) = (mean_model.cfg.m, mean_model.cfg.p);
    if denoiser.cfg.m != m || denoiser.cfg.p != p || denoiser.cfg.v != mean_model.cfg.v {
        return Err(Error::Config("denoiser and mean model disagree on window geometry".into()));
    }
    let set = window_starts(train, m, p, 1)?;
    let n_windows = set.starts.len();
    let tc = &cfg.train;
    let mut adam = AdamState::new(&denoiser.params, tc.weight_decay);
    let mut stopper = EarlyStopping::new(tc.patience);
    let mut best = None;
    let mut history = Vec::new();
    let root = RngStream::new(seed, 0).substream(TAG_STAGE2);
    let val_stream = root.substream(TAG_VAL);

    for epoch in 1..=tc.max_epochs {
        let lr = tc.lr_at(epoch);
        let epoch_rng = root.substream(epoch as u64);
        let order = shuffled_indices(n_windows, &mut epoch_rng.substream(1));
        let mut noise_rng = epoch_rng.substream(2);
        let mut train_loss = 0.0;
        for (bi, chunk) in order.chunks(tc.batch_size).enumerate() {
            let batch = assemble_batch(train, &set, chunk);
            let r0 = mean_model.residual_targets(&batch)?;
            let nb = make_noised(&batch, &r0, scale, schedule, cfg.scale_power, &mut noise_rng)?;
            denoiser.params.zero_grad();
            let mut tape = Tape::new();
            let out = denoiser.forward(
                &mut tape,
                &nb.x_co_rows,
                &nb.r_rows,
                &nb.q_rows,
                &nb.steps,
                &nb.tod,
                &nb.dow,
            )?;
            let loss = tape.mean_sq_diff(out, nb.eps_rows)?;
            let loss_val = tape.value(loss).data()[0];
            if !loss_val.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch}, batch {bi}"
                )));
            }
            tape.backward(loss, &mut denoiser.params)?;
            adam.step(&mut denoiser.params, lr);
            train_loss += loss_val * chunk.len() as f64;
        }
        train_loss /= n_windows as f64;
        let val_loss = eval_val_crps(
            denoiser,
            mean_model,
            val,
            scale,
            schedule,
            cfg,
            tc.batch_size,
            &val_stream,
        )?;
        history.push(EpochRecord { epoch, train_loss, val_loss, lr });
        if stopper.observe(epoch, val_loss) {
            best = Some(denoiser.params.clone());
        }
        if stopper.should_stop() {
            break;
        }
    }
    if let Some(best) = best {
        denoiser.params = best;
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{all_windows, Layout};
    use crate::diffusion::denoiser::DenoiserConfig;
    use crate::diffusion::schedule::build_schedule;
    use crate::mean::MeanModelConfig;

    fn gaussian_series(sigmas: &[f64], t: usize, seed: u64) -> SpatioTemporalSeries {
        let v = sigmas.len();
        let mut rng = RngStream::new(seed, 0x474153);
        let noise = rng.draw_normal(&[t, v, 1]);
        let data: Vec<f64> =
            noise.data().iter().enumerate().map(|(i, &z)| sigmas[i % v] * z).collect();
        SpatioTemporalSeries::new(
            Tensor::from_vec(&[t, v, 1], data).unwrap(),
            30,
            0,
            Layout::Grid { h: 1, w: v },
            vec![],
        )
        .unwrap()
    }

    fn zero_mean_model(v: usize) -> MeanModel {
        let cfg = MeanModelConfig { m: 4, p: 2, v, c: 1, hidden: 4, blocks: 1, steps_per_day: 48 };
        let mut model = MeanModel::new(cfg, 1);
        for p in model.params.iter_mut() {
            for x in p.value.data_mut() {
                *x = 0.0;
            }
        }
        model
    }

    fn test_scale(sigmas: &[f64]) -> FluctuationScale {
        FluctuationScale {
            sigma2: sigmas.iter().map(|s| s * s).collect(),
            units: sigmas.len(),
            channels: 1,
            threshold: 0.1,
            source_len: 0,
            include_dc: false,
        }
    }

    /// Recovers the exact ε when r0 = 0: ε = (r_n − (1−√ᾱ_n)Q)/√(1−ᾱ_n).
    struct InvertingPredictor {
        schedule: NoiseSchedule,
    }
    impl NoisePredictor for InvertingPredictor {
        fn predict_noise(
            &self,
            _x: &Tensor,
            r: &Tensor,
            q: &Tensor,
            n: &[usize],
            _tod: &[usize],
            _dow: &[usize],
        ) -> Result<Tensor> {
            let v = r.shape()[0] / n.len();
            let per_row = r.shape()[1];
            let mut out = vec![0.0; r.len()];
            for (row, chunk) in out.chunks_mut(per_row).enumerate() {
                let ab = self.schedule.alpha_bar(n[row / v]);
                for (j, o) in chunk.iter_mut().enumerate() {
                    let i = row * per_row + j;
                    *o = (r.data()[i] - (1.0 - ab.sqrt()) * q.data()[i]) / (1.0 - ab).sqrt();
                }
            }
            Tensor::from_vec(r.shape(), out)
        }
    }

    struct ZeroPredictor;
    impl NoisePredictor for ZeroPredictor {
        fn predict_noise(
            &self,
            _x: &Tensor,
            r: &Tensor,
            _q: &Tensor,
            _n: &[usize],
            _tod: &[usize],
            _dow: &[usize],
        ) -> Result<Tensor> {
            Ok(Tensor::zeros(r.shape()))
        }
    }

    #[test]
    fn exact_noise_predictor_gives_zero_loss() {
        let series = gaussian_series(&[1.0, 1.0], 60, 2);
        let batch = all_windows(&series, 4, 2, 7).unwrap();
        let r0 = Tensor::zeros(batch.x_ta.shape());
        let schedule = NoiseSchedule::default();
        let scale = test_scale(&[0.5, 1.5]);
        let predictor = InvertingPredictor { schedule: schedule.clone() };
        let mut stream = RngStream::new(8, 0);
        let loss =
            diffusion_loss(&predictor, &batch, &r0, &scale, &schedule, 2, &mut stream).unwrap();
        assert!(loss < 1e-20, "loss {loss}");
    }

    #[test]
    fn zero_predictor_loss_near_unit_variance() {
        // ε̂ ≡ 0 → loss is the empirical mean of ε²; ≈ 1 over ≥ 10⁴ draws.
        let series = gaussian_series(&[1.0, 1.0, 1.0, 1.0], 300, 3);
        let batch = all_windows(&series, 4, 2, 11).unwrap();
        let schedule = NoiseSchedule::default();
        let scale = test_scale(&[1.0; 4]);
        let mut stream = RngStream::new(9, 0);
        let mut total = 0.0;
        let mut draws = 0usize;
        let r0 = Tensor::zeros(batch.x_ta.shape());
        while draws < 12_000 {
            total += diffusion_loss(&ZeroPredictor, &batch, &r0, &scale, &schedule, 2, &mut stream)
                .unwrap()
                * batch.x_ta.len() as f64;
            draws += batch.x_ta.len();
        }
        let got = total / draws as f64;
        assert!((got - 1.0).abs() < 0.03, "loss {got}");
    }

    #[test]
    fn stage2_loss_drops_on_gaussian_residuals() {
        let sigmas = [0.5, 1.5];
        let series = gaussian_series(&sigmas, 420, 4);
        let (train, val) = {
            let (a, b, _) = crate::data::split(&series, (6, 2, 2)).unwrap();
            (a, b)
        };
        let mean_model = zero_mean_model(2);
        let scale = test_scale(&sigmas);
        // Fast-decaying schedule keeps the attainable ε-MSE floor low.
        let schedule = build_schedule(10, 0.5, 0.9).unwrap();
        let mut denoiser = Denoiser::new(
            DenoiserConfig { m: 4, p: 2, v: 2, c: 1, dim: 16, blocks: 2, steps_per_day: 48 },
            5,
        );
        let cfg = Stage2Config {
            train: TrainConfig { max_epochs: 20, ..Default::default() },
            val_window_cap: Some(16),
            ..Default::default()
        };

        let batch = all_windows(&train, 4, 2, 31).unwrap();
        let r0 = mean_model.residual_targets(&batch).unwrap();
        let loss_before: f64 = (0..20)
            .map(|i| {
                let mut s = RngStream::new(100 + i, 0);
                diffusion_loss(&denoiser, &batch, &r0, &scale, &schedule, 2, &mut s).unwrap()
            })
            .sum::<f64>()
            / 20.0;

        train_stage2(&mut denoiser, &mean_model, &train, &val, &scale, &schedule, &cfg, 6)
            .unwrap();

        let loss_after: f64 = (0..20)
            .map(|i| {
                let mut s = RngStream::new(100 + i, 0);
                diffusion_loss(&denoiser, &batch, &r0, &scale, &schedule, 2, &mut s).unwrap()
            })
            .sum::<f64>()
            / 20.0;
        assert!(
            loss_after * 5.0 <= loss_before,
            "loss only {loss_before} -> {loss_after}"
        );
    }

    #[test]
    fn stage2_improves_val_crps_and_is_deterministic() {
        let sigmas = [0.5, 1.5];
        let series = gaussian_series(&sigmas, 420, 7);
        let (train, val, _) = crate::data::split(&series, (6, 2, 2)).unwrap();
        let mean_model = zero_mean_model(2);
        let scale = test_scale(&sigmas);
        let schedule = build_schedule(10, 0.5, 0.9).unwrap();
        let cfg = Stage2Config {
            train: TrainConfig { max_epochs: 12, ..Default::default() },
            val_window_cap: Some(16),
            ..Default::default()
        };
        let dcfg = DenoiserConfig { m: 4, p: 2, v: 2, c: 1, dim: 16, blocks: 2, steps_per_day: 48 };

        let stream = RngStream::new(77, 0);
        let untrained = Denoiser::new(dcfg.clone(), 5);
        let crps_untrained = eval_val_crps(
            &untrained, &mean_model, &val, &scale, &schedule, &cfg, 32, &stream,
        )
        .unwrap();

        let mut a = Denoiser::new(dcfg.clone(), 5);
        let hist_a =
            train_stage2(&mut a, &mean_model, &train, &val, &scale, &schedule, &cfg, 6).unwrap();
        let mut b = Denoiser::new(dcfg, 5);
        let hist_b =
            train_stage2(&mut b, &mean_model, &train, &val, &scale, &schedule, &cfg, 6).unwrap();

        // Deterministic rerun: identical history and parameters.
        assert_eq!(hist_a.len(), hist_b.len());
        for (ra, rb) in hist_a.iter().zip(&hist_b) {
            assert_eq!(ra.epoch, rb.epoch);
            assert_eq!(ra.train_loss, rb.train_loss);
            assert_eq!(ra.val_loss, rb.val_loss);
        }
        for (pa, pb) in a.params.iter().zip(b.params.iter()) {
            assert_eq!(pa.value.data(), pb.value.data());
        }

        let crps_trained =
            eval_val_crps(&a, &mean_model, &val, &scale, &schedule, &cfg, 32, &stream).unwrap();
        assert!(
            crps_trained < 0.7 * crps_untrained,
            "CRPS {crps_untrained} -> {crps_trained}"
        );
    }

    #[test]
    fn geometry_mismatch_is_config_error() {
        let series = gaussian_series(&[1.0, 1.0], 120, 1);
        let (train, val, _) = crate::data::split(&series, (6, 2, 2)).unwrap();
        let mean_model = zero_mean_model(2);
        let scale = test_scale(&[1.0, 1.0]);
        let schedule = build_schedule(5, 0.2, 0.5).unwrap();
        let mut denoiser = Denoiser::new(
            DenoiserConfig { m: 4, p: 3, v: 2, c: 1, dim: 8, blocks: 1, steps_per_day: 48 },
            1,
        );
        let err = train_stage2(
            &mut denoiser,
            &mean_model,
            &train,
            &val,
            &scale,
            &schedule,
            &Stage2Config::default(),
            1,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
