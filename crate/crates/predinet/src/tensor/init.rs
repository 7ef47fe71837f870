use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Tensor;

/// Variance of a standard normal truncated to [-2, 2]:
/// `1 - 4*phi(2) / (Phi(2) - Phi(-2))`.
pub const TRUNC_NORMAL_VAR_FACTOR: f64 = 0.773_741_25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitScheme {
    /// Normal(0, std^2) with draws outside 2 std resampled.
    TruncatedNormal { std: f32 },
    Zeros,
}

impl InitScheme {
    /// Default weight init: truncated normal with std = 1/sqrt(fan_in).
    pub fn fan_in(fan_in: usize) -> Self {
        InitScheme::TruncatedNormal {
            std: 1.0 / (fan_in as f32).sqrt(),
        }
    }
}

/// Standard normal via Box-Muller; one draw per call keeps the stream
/// independent of call batching.
fn std_normal(rng: &mut ChaCha8Rng) -> f32 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    ((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()) as f32
}

pub fn init_params(shape: &[usize], rng: &mut ChaCha8Rng, scheme: InitScheme) -> Tensor {
    let n: usize = shape.iter().product();
    let data = match scheme {
        InitScheme::Zeros => vec![0.0; n],
        InitScheme::TruncatedNormal { std } => (0..n)
            .map(|_| {
                let z = loop {
                    let z = std_normal(rng);
                    if z.abs() <= 2.0 {
                        break z;
                    }
                };
                z * std
            })
            .collect(),
    };
    Tensor::new(shape.to_vec(), data)
}
