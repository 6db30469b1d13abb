//! Minimal trainable-network kernel: tape-recorded forward passes over a
//! fixed operator set, exact reverse-mode gradients, and Adam.

pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod tape;

pub use adam::AdamState;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use layers::{sinusoidal_encoding, Embedding, Linear, ResidualBlock};
pub use tape::{NodeId, ParamId, ParamSet, Parameter, Tape};
