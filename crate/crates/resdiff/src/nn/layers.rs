use crate::error::{Error, Result};
use crate::numerics::{RngStream, Tensor};
use crate::nn::tape::{NodeId, ParamId, ParamSet, Tape};

/// Fully connected layer y = x·Wᵀ + b.
/// Weights init uniform ±1/√fan_in, biases zero.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut RngStream,
    ) -> Linear {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let data: Vec<f64> =
            (0..out_dim * in_dim).map(|_| (rng.draw_uniform() * 2.0 - 1.0) * bound).collect();
        let w = Tensor::from_vec(&[out_dim, in_dim], data).expect("weight shape");
        Linear {
            w: ps.add(&format!("{name}.w"), w),
            b: ps.add(&format!("{name}.b"), Tensor::zeros(&[out_dim])),
            in_dim,
            out_dim,
        }
    }

    pub fn apply(&self, tape: &mut Tape, ps: &ParamSet, x: NodeId) -> Result<NodeId> {
        let w = tape.param(ps, self.w);
        let b = tape.param(ps, self.b);
        tape.linear(x, w, b)
    }
}

/// Lookup table of row vectors, init normal(0, 0.02).
#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
    pub rows: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        rows: usize,
        dim: usize,
        rng: &mut RngStream,
    ) -> Embedding {
        let table = rng.draw_normal(&[rows, dim]).map(|v| v * 0.02);
        Embedding { table: ps.add(&format!("{name}.table"), table), rows, dim }
    }

    pub fn apply(&self, tape: &mut Tape, ps: &ParamSet, idx: Vec<usize>) -> Result<NodeId> {
        for &i in &idx {
            if i >= self.rows {
                return Err(Error::InvalidArgument(format!(
                    "embedding index {i} out of table range 0..{}",
                    self.rows
                )));
            }
        }
        let table = tape.param(ps, self.table);
        tape.gather_rows(table, idx)
    }
}

/// Linear → ReLU → Linear with a skip connection, constant width.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub l1: Linear,
    pub l2: Linear,
}

impl ResidualBlock {
    pub fn new(ps: &mut ParamSet, name: &str, dim: usize, rng: &mut RngStream) -> ResidualBlock {
        ResidualBlock {
            l1: Linear::new(ps, &format!("{name}.l1"), dim, dim, rng),
            l2: Linear::new(ps, &format!("{name}.l2"), dim, dim, rng),
        }
    }

    pub fn apply(&self, tape: &mut Tape, ps: &ParamSet, x: NodeId) -> Result<NodeId> {
        let h = self.l1.apply(tape, ps, x)?;
        let h = tape.relu(h);
        let h = self.l2.apply(tape, ps, h)?;
        tape.add(x, h)
    }
}

/// Interleaved sin/cos encoding of a step index over geometrically spaced
/// frequencies with base 10000; values in [−1, 1].
pub fn sinusoidal_encoding(n: usize, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::InvalidArgument(format!("encoding dim must be even, got {dim}")));
    }
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = 1.0 / 10_000f64.powf(2.0 * i as f64 / dim as f64);
        let angle = n as f64 * freq;
        out[2 * i] = angle.sin();
        out[2 * i + 1] = angle.cos();
    }
    Ok(out)
}
