//! Dataset formats, chronological splits, window extraction, calendar
//! covariates, and synthetic generators with known ground truth.

pub mod formats;
pub mod series;
pub mod synthetic;
pub mod windows;

pub use formats::{load_series, read_csv, read_stbin, write_stbin};
pub use series::{split, Layout, SpatioTemporalSeries};
pub use synthetic::{gen_synthetic, NoiseSpec, SyntheticKind, SyntheticParams, SyntheticTruth};
pub use windows::{all_windows, assemble_batch, window_starts, WindowBatch, WindowSet};
