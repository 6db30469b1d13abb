//! Command implementations behind the CLI: data generation, two-stage
//! training, parallel ensemble forecasting, and evaluation, all rooted in
//! one `RunConfig`.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::windows::{assemble_batch, window_starts};
use crate::data::{gen_synthetic, load_series, read_stbin, split, write_stbin, SpatioTemporalSeries};
use crate::diffusion::{
    build_schedule, sample_member, train_stage2, Denoiser, DenoiserConfig, NoiseSchedule,
    Stage2Config,
};
use crate::ensemble::{read_ensemble, write_ensemble, EnsembleForecast};
use crate::error::{Error, Result};
use crate::fluctscale::{compute_scale, FluctuationScale};
use crate::mean::{train_mean, MeanModel, MeanModelConfig};
use crate::metrics::{evaluate, MetricOptions, MetricReport};
use crate::nn::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::numerics::{ChannelStats, RngStream, Tensor};
use crate::training::EpochRecord;

/// File layout inside `out_dir`.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub data: PathBuf,
    pub truth: PathBuf,
    pub mean_ckpt: PathBuf,
    pub diffusion_ckpt: PathBuf,
    pub mean_history: PathBuf,
    pub diffusion_history: PathBuf,
    pub ensemble: PathBuf,
    pub report: PathBuf,
    pub picp_table: PathBuf,
    pub pit_table: PathBuf,
    pub timing: PathBuf,
}

impl Artifacts {
    pub fn new(out_dir: &Path) -> Artifacts {
        Artifacts {
            data: out_dir.join("data.stbin"),
            truth: out_dir.join("truth.json"),
            mean_ckpt: out_dir.join("mean.ckpt"),
            diffusion_ckpt: out_dir.join("diffusion.ckpt"),
            mean_history: out_dir.join("mean_history.tsv"),
            diffusion_history: out_dir.join("diffusion_history.tsv"),
            ensemble: out_dir.join("ensemble.ens"),
            report: out_dir.join("report.txt"),
            picp_table: out_dir.join("picp.tsv"),
            pit_table: out_dir.join("pit.tsv"),
            timing: out_dir.join("timing.txt"),
        }
    }
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<Artifacts> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    Ok(Artifacts::new(&cfg.out_dir))
}

/// Generate (or pass through) the dataset. Synthetic data is always written
/// to disk and read back so every stage sees the same f32-quantized values.
pub fn cmd_gen_data(cfg: &RunConfig) -> Result<PathBuf> {
    let art = ensure_out_dir(cfg)?;
    if let Some(path) = &cfg.data.path {
        return Ok(path.clone());
    }
    let (series, truth) = gen_synthetic(&cfg.data.synthetic, cfg.seed)?;
    write_stbin(&art.data, &series)?;
    let sidecar = serde_json::to_string_pretty(&truth)
        .map_err(|e| Error::Format(format!("truth sidecar encode: {e}")))?;
    std::fs::write(&art.truth, sidecar)?;
    Ok(art.data)
}

fn load_dataset(cfg: &RunConfig) -> Result<SpatioTemporalSeries> {
    match &cfg.data.path {
        Some(path) => load_series(path, &cfg.data.format),
        None => {
            let art = Artifacts::new(&cfg.out_dir);
            if !art.data.exists() {
                cmd_gen_data(cfg)?;
            }
            read_stbin(&art.data)
        }
    }
}

struct Prepared {
    train: SpatioTemporalSeries,
    val: SpatioTemporalSeries,
    test: SpatioTemporalSeries,
    stats: ChannelStats,
    steps_per_day: usize,
    v: usize,
    c: usize,
}

fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let full = load_dataset(cfg)?;
    let (mut train, mut val, mut test) =
        split(&full, (cfg.split[0] as u32, cfg.split[1] as u32, cfg.split[2] as u32))?;
    let stats = ChannelStats::fit(&train.values)?;
    train.values = stats.apply(&train.values);
    val.values = stats.apply(&val.values);
    test.values = stats.apply(&test.values);
    Ok(Prepared {
        steps_per_day: full.steps_per_day(),
        v: full.v(),
        c: full.c(),
        train,
        val,
        test,
        stats,
    })
}

fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut out = String::from("epoch\ttrain_loss\tval_loss\tlr\n");
    for r in history {
        out.push_str(&format!("{}\t{}\t{}\t{}\n", r.epoch, r.train_loss, r.val_loss, r.lr));
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct MeanExtra {
    kind: String,
    model: MeanModelConfig,
    stats: ChannelStats,
    trained: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct DiffusionExtra {
    kind: String,
    model: DenoiserConfig,
    schedule: crate::config::ScheduleConfig,
    scale: FluctuationScale,
    stats: ChannelStats,
    mean_fingerprint: String,
}

fn mean_config(cfg: &RunConfig, prep: &Prepared) -> MeanModelConfig {
    MeanModelConfig {
        m: cfg.windows.m,
        p: cfg.windows.p,
        v: prep.v,
        c: prep.c,
        hidden: cfg.mean.hidden,
        blocks: cfg.mean.blocks,
        steps_per_day: prep.steps_per_day,
    }
}

/// Stage 1: pretrain the deterministic mean model (or persist an all-zero
/// model for the diffusion-only ablation).
pub fn cmd_train_mean(cfg: &RunConfig) -> Result<PathBuf> {
    let art = ensure_out_dir(cfg)?;
    let prep = prepare(cfg)?;
    let mut model = MeanModel::new(mean_config(cfg, &prep), cfg.seed);
    if cfg.use_mean_model {
        let history = train_mean(&mut model, &prep.train, &prep.val, &cfg.training, cfg.seed)?;
        write_history(&art.mean_history, &history)?;
    } else {
        for p in model.params.iter_mut() {
            for v in p.value.data_mut() {
                *v = 0.0;
            }
        }
        write_history(&art.mean_history, &[])?;
    }
    let extra = MeanExtra {
        kind: "mean".into(),
        model: model.cfg.clone(),
        stats: prep.stats,
        trained: cfg.use_mean_model,
    };
    save_checkpoint(
        &art.mean_ckpt,
        &mut model.params,
        &cfg.fingerprint(),
        cfg.seed,
        serde_json::to_value(&extra).map_err(|e| Error::Format(e.to_string()))?,
    )?;
    Ok(art.mean_ckpt)
}

fn load_mean_checkpoint(cfg: &RunConfig, art: &Artifacts) -> Result<(MeanModel, MeanExtra)> {
    if !art.mean_ckpt.exists() {
        return Err(Error::Config(format!(
            "stage-1 checkpoint {} missing; run train-mean first",
            art.mean_ckpt.display()
        )));
    }
    let ckpt = load_checkpoint(&art.mean_ckpt)?;
    if ckpt.fingerprint != cfg.fingerprint() {
        return Err(Error::Config(format!(
            "stage-1 checkpoint was produced by config {}, current config is {}",
            ckpt.fingerprint,
            cfg.fingerprint()
        )));
    }
    let extra: MeanExtra = serde_json::from_value(ckpt.extra.clone())
        .map_err(|e| Error::Format(format!("mean checkpoint metadata: {e}")))?;
    let mut model = MeanModel::new(extra.model.clone(), ckpt.seed);
    model.load_params(&ckpt.params)?;
    Ok((model, extra))
}

fn schedule_from(cfg: &RunConfig) -> Result<NoiseSchedule> {
    build_schedule(cfg.schedule.steps, cfg.schedule.beta_first, cfg.schedule.beta_last)
}

/// Stage 2: train the residual denoiser against the frozen stage-1 model.
pub fn cmd_train_diffusion(cfg: &RunConfig) -> Result<PathBuf> {
    let art = ensure_out_dir(cfg)?;
    let prep = prepare(cfg)?;
    let (mean_model, mean_extra) = load_mean_checkpoint(cfg, &art)?;
    let scale = compute_scale(&prep.train, cfg.scale.threshold, cfg.scale.include_dc)?;
    let schedule = schedule_from(cfg)?;
    let mut denoiser = Denoiser::new(
        DenoiserConfig {
            m: cfg.windows.m,
            p: cfg.windows.p,
            v: prep.v,
            c: prep.c,
            dim: cfg.denoiser.hidden,
            blocks: cfg.denoiser.blocks,
            steps_per_day: prep.steps_per_day,
        },
        cfg.seed,
    );
    let stage2 = Stage2Config {
        train: cfg.diffusion_training().clone(),
        val_samples: cfg.sampling.val_samples,
        scale_power: cfg.scale.scale_power,
        mode: cfg.sampling.posterior_mode,
        val_window_cap: match cfg.sampling.val_window_cap {
            0 => None,
            cap => Some(cap),
        },
    };
    let history = train_stage2(
        &mut denoiser,
        &mean_model,
        &prep.train,
        &prep.val,
        &scale,
        &schedule,
        &stage2,
        cfg.seed,
    )?;
    write_history(&art.diffusion_history, &history)?;
    let extra = DiffusionExtra {
        kind: "diffusion".into(),
        model: denoiser.cfg.clone(),
        schedule: cfg.schedule.clone(),
        scale,
        stats: prep.stats,
        mean_fingerprint: cfg.fingerprint(),
    };
    save_checkpoint(
        &art.diffusion_ckpt,
        &mut denoiser.params,
        &cfg.fingerprint(),
        cfg.seed,
        serde_json::to_value(&extra).map_err(|e| Error::Format(e.to_string()))?,
    )?;
    let _ = mean_extra;
    Ok(art.diffusion_ckpt)
}

/// Both training stages in order.
pub fn cmd_train(cfg: &RunConfig) -> Result<(PathBuf, PathBuf)> {
    let mean = cmd_train_mean(cfg)?;
    let diffusion = cmd_train_diffusion(cfg)?;
    Ok((mean, diffusion))
}

fn load_diffusion_checkpoint(art: &Artifacts) -> Result<(Denoiser, DiffusionExtra, Checkpoint)> {
    if !art.diffusion_ckpt.exists() {
        return Err(Error::Config(format!(
            "stage-2 checkpoint {} missing; run train-diffusion first",
            art.diffusion_ckpt.display()
        )));
    }
    let ckpt = load_checkpoint(&art.diffusion_ckpt)?;
    let extra: DiffusionExtra = serde_json::from_value(ckpt.extra.clone())
        .map_err(|e| Error::Format(format!("diffusion checkpoint metadata: {e}")))?;
    let mut denoiser = Denoiser::new(extra.model.clone(), ckpt.seed);
    denoiser.load_params(&ckpt.params)?;
    Ok((denoiser, extra, ckpt))
}

/// RNG stream id for inference sampling.
const STREAM_FORECAST: u64 = 0x464f5243;

/// Sample a K-member ensemble over the test split and write it, fanning
/// members out over `jobs` threads with a deterministic by-index merge.
pub fn cmd_forecast(cfg: &RunConfig, jobs: usize) -> Result<PathBuf> {
    let art = ensure_out_dir(cfg)?;
    let (mean_model, mean_extra) = load_mean_checkpoint(cfg, &art)?;
    let (denoiser, diff_extra, diff_ckpt) = load_diffusion_checkpoint(&art)?;
    if diff_ckpt.fingerprint != cfg.fingerprint()
        || diff_extra.mean_fingerprint != cfg.fingerprint()
    {
        return Err(Error::Config(
            "diffusion checkpoint does not match the current config/stage-1 fingerprint".into(),
        ));
    }
    let prep = prepare(cfg)?;
    if diff_extra.stats != prep.stats || mean_extra.stats != prep.stats {
        return Err(Error::Config(
            "standardization statistics in checkpoints disagree with the dataset".into(),
        ));
    }
    let (m, p) = (cfg.windows.m, cfg.windows.p);
    let k = cfg.sampling.k;
    let jobs = jobs.max(1);
    let schedule = build_schedule(
        diff_extra.schedule.steps,
        diff_extra.schedule.beta_first,
        diff_extra.schedule.beta_last,
    )?;
    let set = window_starts(&prep.test, m, p, p)?;
    let b_total = set.starts.len();
    let shape = [b_total, p, prep.v, prep.c];
    let mut samples = vec![Tensor::zeros(&shape); k];
    let started = std::time::Instant::now();

    let chunk_ids: Vec<Vec<usize>> = (0..b_total)
        .collect::<Vec<_>>()
        .chunks(cfg.training.batch_size)
        .map(<[usize]>::to_vec)
        .collect();
    for (chunk_idx, chunk) in chunk_ids.iter().enumerate() {
        let batch = assemble_batch(&prep.test, &set, chunk);
        let mean = mean_model.predict_mean(&batch)?;
        let root = RngStream::new(cfg.seed, STREAM_FORECAST).substream(chunk_idx as u64);
        // Each member is a pure function of its substream; spreading members
        // across threads cannot change the merged result.
        let member_results: Vec<Result<Tensor>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..jobs)
                .map(|j| {
                    let batch = &batch;
                    let denoiser = &denoiser;
                    let scale = &diff_extra.scale;
                    let schedule = &schedule;
                    let root = &root;
                    scope.spawn(move || {
                        (j..k)
                            .step_by(jobs)
                            .map(|member| {
                                sample_member(
                                    denoiser,
                                    batch,
                                    scale,
                                    schedule,
                                    member as u64,
                                    cfg.scale.scale_power,
                                    cfg.sampling.posterior_mode,
                                    root,
                                )
                            })
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            let mut merged: Vec<Option<Result<Tensor>>> = (0..k).map(|_| None).collect();
            for (j, handle) in handles.into_iter().enumerate() {
                for (slot, result) in handle.join().expect("sampler thread").into_iter().enumerate()
                {
                    merged[j + slot * jobs] = Some(result);
                }
            }
            merged.into_iter().map(|r| r.expect("every member sampled")).collect()
        });
        for (member, residual) in member_results.into_iter().enumerate() {
            let residual = residual?;
            let std_forecast = Tensor::from_vec(
                mean.shape(),
                mean.data().iter().zip(residual.data()).map(|(&m, &r)| m + r).collect(),
            )?;
            let original = prep.stats.invert(&std_forecast);
            // Copy this chunk's windows into the full [B,P,V,C] sample.
            let row = p * prep.v * prep.c;
            for (bi, &window) in chunk.iter().enumerate() {
                let src = &original.data()[bi * row..(bi + 1) * row];
                samples[member].data_mut()[window * row..(window + 1) * row]
                    .copy_from_slice(src);
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();

    let ens = EnsembleForecast {
        samples,
        window_start: set.starts.iter().map(|&s| prep.test.origin_index + s).collect(),
        m,
        interval_minutes: prep.test.interval_minutes,
        start_epoch_seconds: prep.test.start_epoch_seconds,
        seed: cfg.seed,
    };
    write_ensemble(&art.ensemble, &ens)?;
    // Wall-clock timing is run-dependent, so it lives outside the
    // deterministic artifacts.
    std::fs::write(
        &art.timing,
        format!("inference_seconds: {elapsed:.3}\nk: {k}\nwindows: {b_total}\njobs: {jobs}\n"),
    )?;
    Ok(art.ensemble)
}

/// Score an ensemble file against the originating dataset.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<MetricReport> {
    let art = ensure_out_dir(cfg)?;
    if !art.ensemble.exists() {
        return Err(Error::Config(format!(
            "ensemble {} missing; run forecast first",
            art.ensemble.display()
        )));
    }
    let ens = read_ensemble(&art.ensemble)?;
    let full = load_dataset(cfg)?;
    let truth = ens.aligned_truth(&full)?;
    let samples = ens.as_metric_tensor()?;
    let opts = MetricOptions {
        m_qis: cfg.metrics.m_qis,
        alpha_ci: cfg.metrics.alpha_ci,
        use_median: cfg.metrics.use_median,
        pit_seed: cfg.seed,
        ..Default::default()
    };
    let report = evaluate(&samples, &truth, &opts)?;

    let mut picp = String::from("level\tcoverage\n");
    for (level, coverage) in &report.picp {
        picp.push_str(&format!("{level}\t{coverage}\n"));
    }
    std::fs::write(&art.picp_table, picp)?;
    let mut pit = String::from("level\tcdf\n");
    for (level, cdf) in &report.pit_cdf {
        pit.push_str(&format!("{level}\t{cdf}\n"));
    }
    std::fs::write(&art.pit_table, pit)?;

    let mut out = std::fs::File::create(&art.report)?;
    if report.degenerate_k {
        writeln!(out, "# warning: K=1 ensemble; CRPS degenerates to absolute error")?;
    }
    if report.qice.is_nan() {
        writeln!(out, "# warning: K < m_qis, QICE not computed")?;
    }
    writeln!(out, "mae: {}", report.mae)?;
    writeln!(out, "rmse: {}", report.rmse)?;
    writeln!(out, "crps_raw: {}", report.crps_raw)?;
    writeln!(out, "crps_norm: {}", report.crps_norm)?;
    writeln!(out, "qice: {}", report.qice)?;
    writeln!(out, "is: {}", report.is)?;
    // File names only: the report must not depend on where the run lives.
    writeln!(out, "picp_table: picp.tsv")?;
    writeln!(out, "pit_table: pit.tsv")?;
    Ok(report)
}

/// Everything: data → stage 1 → stage 2 → forecast → evaluate.
pub fn cmd_pipeline(cfg: &RunConfig, jobs: usize) -> Result<MetricReport> {
    cmd_gen_data(cfg)?;
    cmd_train_mean(cfg)?;
    cmd_train_diffusion(cfg)?;
    cmd_forecast(cfg, jobs)?;
    cmd_evaluate(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::NoiseSpec;
    use tempfile::tempdir;

    fn tiny_config(out_dir: PathBuf) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.out_dir = out_dir;
        cfg.seed = 3;
        cfg.windows = crate::config::WindowConfig { m: 8, p: 4 };
        cfg.data.synthetic.h = 2;
        cfg.data.synthetic.w = 2;
        cfg.data.synthetic.t = 360;
        cfg.data.synthetic.period1 = 24.0;
        cfg.data.synthetic.period2 = 96.0;
        cfg.data.synthetic.noise = NoiseSpec::Ramp(0.1, 0.3);
        cfg.mean = crate::config::NetConfig { hidden: 8, blocks: 1 };
        cfg.denoiser = crate::config::NetConfig { hidden: 12, blocks: 1 };
        cfg.schedule = crate::config::ScheduleConfig { steps: 6, beta_first: 0.05, beta_last: 0.5 };
        cfg.training.max_epochs = 2;
        cfg.sampling.k = 4;
        cfg.sampling.val_window_cap = 4;
        cfg
    }

    #[test]
    fn gen_data_is_deterministic_and_sized() {
        let dir = tempdir().unwrap();
        let cfg = tiny_config(dir.path().join("run"));
        let path = cmd_gen_data(&cfg).unwrap();
        let first = std::fs::read(&path).unwrap();
        let expected_payload = cfg.data.synthetic.t * 4 * 4; // T·V·C·4 bytes
        assert!(first.len() > expected_payload);
        assert!(first.ends_with(&[0u8; 0]));
        cmd_gen_data(&cfg).unwrap();
        let second = std::fs::read(&path).unwrap();
        assert_eq!(first, second);
        let truth: crate::data::SyntheticTruth =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/truth.json")).unwrap())
                .unwrap();
        assert_eq!(truth.sigma.len(), 4);
        assert!((truth.sigma[0] - 0.1).abs() < 1e-12);
        assert!((truth.sigma[3] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn stage_ordering_enforced() {
        let dir = tempdir().unwrap();
        let cfg = tiny_config(dir.path().join("run"));
        cmd_gen_data(&cfg).unwrap();
        let err = cmd_train_diffusion(&cfg).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        let err = cmd_forecast(&cfg, 1).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = cmd_evaluate(&cfg).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn fingerprint_mismatch_rejected() {
        let dir = tempdir().unwrap();
        let mut cfg = tiny_config(dir.path().join("run"));
        cmd_gen_data(&cfg).unwrap();
        cmd_train_mean(&cfg).unwrap();
        cfg.seed = 99; // different fingerprint
        let err = cmd_train_diffusion(&cfg).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn full_tiny_pipeline_and_determinism() {
        let dir = tempdir().unwrap();
        let cfg = tiny_config(dir.path().join("run"));
        let report = cmd_pipeline(&cfg, 1).unwrap();
        assert!(report.mae.is_finite() && report.crps_raw >= 0.0);
        let art = Artifacts::new(&cfg.out_dir);
        let snapshot = |a: &Artifacts| {
            [&a.data, &a.mean_ckpt, &a.diffusion_ckpt, &a.ensemble, &a.report, &a.picp_table]
                .iter()
                .map(|p| std::fs::read(p).unwrap())
                .collect::<Vec<_>>()
        };
        let first = snapshot(&art);

        let cfg2 = tiny_config(dir.path().join("run2"));
        cmd_pipeline(&cfg2, 2).unwrap();
        let second = snapshot(&Artifacts::new(&cfg2.out_dir));
        assert_eq!(first, second, "rerun with same seed must be byte-identical");
    }

    #[test]
    fn jobs_do_not_change_the_ensemble() {
        let dir = tempdir().unwrap();
        let cfg = tiny_config(dir.path().join("run"));
        cmd_gen_data(&cfg).unwrap();
        cmd_train(&cfg).unwrap();
        cmd_forecast(&cfg, 1).unwrap();
        let art = Artifacts::new(&cfg.out_dir);
        let serial = std::fs::read(&art.ensemble).unwrap();
        cmd_forecast(&cfg, 3).unwrap();
        let parallel = std::fs::read(&art.ensemble).unwrap();
        assert_eq!(serial, parallel);
    }
}
