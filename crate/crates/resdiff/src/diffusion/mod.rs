//! Scale-aware residual diffusion: noise schedule, forward kernel,
//! ε-prediction denoiser, reverse sampler, and Stage-2 training.

pub mod denoiser;
pub mod sampler;
pub mod schedule;
pub mod train;

pub use denoiser::{Denoiser, DenoiserConfig, NoisePredictor};
pub use sampler::{
    infer, sample_member, sample_residuals, sample_trajectory, TAG_INIT, TAG_SIGN, TAG_STEP,
};
pub use schedule::{build_schedule, forward_noise, posterior_mean, NoiseSchedule, PosteriorMode};
pub use train::{diffusion_loss, eval_val_crps, train_stage2, Stage2Config};
