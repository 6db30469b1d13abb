//! Deterministic numeric kernel: dense tensors, seeded random streams,
//! real-input FFT, and standardization statistics.

pub mod fft;
pub mod rng;
pub mod stats;
pub mod tensor;

pub use fft::{reconstruct_masked, rfft, SpectrumSide};
pub use rng::RngStream;
pub use stats::ChannelStats;
pub use tensor::{matmul, matmul_nt, matmul_tn, Tensor};
