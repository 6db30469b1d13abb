//! Train the two stages by hand: first the deterministic mean model on
//! windowed history, then the residual denoiser against the frozen mean.
//! Scaled down so it finishes in well under a minute.
//!
//! ```bash
//! cargo run --release --example two_stage_training
//! ```

use resdiff::data::{gen_synthetic, split, NoiseSpec, SyntheticParams};
use resdiff::diffusion::{
    build_schedule, train_stage2, Denoiser, DenoiserConfig, Stage2Config,
};
use resdiff::fluctscale::compute_scale;
use resdiff::mean::{train_mean, MeanModel, MeanModelConfig};
use resdiff::numerics::ChannelStats;
use resdiff::training::TrainConfig;
use resdiff::Result;

fn main() -> Result<()> {
    let seed = 11;
    let params = SyntheticParams {
        h: 2,
        w: 2,
        t: 1024,
        noise: NoiseSpec::Ramp(0.1, 0.4),
        ..Default::default()
    };
    let (series, _) = gen_synthetic(&params, seed)?;
    let (mut train, mut val, _) = split(&series, (6, 2, 2))?;
    let stats = ChannelStats::fit(&train.values)?;
    train.values = stats.apply(&train.values);
    val.values = stats.apply(&val.values);

    let (m, p) = (12, 12);
    let training = TrainConfig {
        max_epochs: 8,
        patience: 3,
        batch_size: 32,
        ..Default::default()
    };

    // Stage 1: the mean model learns the periodic structure directly.
    let mut mean_model = MeanModel::new(
        MeanModelConfig {
            m,
            p,
            v: series.v(),
            c: series.c(),
            hidden: 32,
            blocks: 2,
            steps_per_day: series.steps_per_day(),
        },
        seed,
    );
    let history = train_mean(&mut mean_model, &train, &val, &training, seed)?;
    println!("stage 1 (mean model, MSE):");
    for r in &history {
        println!("  epoch {:>2}: train {:.4}  val {:.4}  lr {:.0e}", r.epoch, r.train_loss, r.val_loss, r.lr);
    }

    // Stage 2: the denoiser only has to model what stage 1 leaves behind.
    // Its validation score is CRPS of sampled ensembles, not MSE.
    let scale = compute_scale(&train, 0.1, false)?;
    let schedule = build_schedule(50, 1e-4, 0.5)?;
    let mut denoiser = Denoiser::new(
        DenoiserConfig {
            m,
            p,
            v: series.v(),
            c: series.c(),
            dim: 32,
            blocks: 2,
            steps_per_day: series.steps_per_day(),
        },
        seed,
    );
    let stage2 = Stage2Config {
        train: TrainConfig { max_epochs: 4, ..training },
        val_samples: 3,
        val_window_cap: Some(8),
        ..Default::default()
    };
    let history =
        train_stage2(&mut denoiser, &mean_model, &train, &val, &scale, &schedule, &stage2, seed)?;
    println!("stage 2 (denoiser, eps-MSE train / CRPS val):");
    for r in &history {
        println!("  epoch {:>2}: train {:.4}  val {:.4}  lr {:.0e}", r.epoch, r.train_loss, r.val_loss, r.lr);
    }
    Ok(())
}
