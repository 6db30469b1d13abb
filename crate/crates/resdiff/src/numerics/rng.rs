use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::tensor::Tensor;

/// Seeded random stream. A (seed, stream_id) pair plus the draw sequence
/// fully determines every value, bit for bit, on every platform.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

/// splitmix64 finalizer, used to derive substream ids.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> RngStream {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Derive an independent stream keyed by `tag`. Substreams of distinct
    /// tags never overlap with each other or with the parent.
    pub fn substream(&self, tag: u64) -> RngStream {
        RngStream::new(self.seed, mix(self.stream_id ^ mix(tag)))
    }

    pub fn draw_normal(&mut self, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| self.rng.sample(StandardNormal)).collect();
        Tensor::from_vec(shape, data).expect("shape/product consistency")
    }

    /// Each element is −1 or +1 with probability 0.5.
    pub fn draw_sign(&mut self, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        let data: Vec<f64> =
            (0..n).map(|_| if self.rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
        Tensor::from_vec(shape, data).expect("shape/product consistency")
    }

    /// Uniform integer in [0, bound).
    pub fn draw_uniform_int(&mut self, bound: u64) -> u64 {
        self.rng.gen_range(0..bound)
    }

    pub fn draw_uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }
}
