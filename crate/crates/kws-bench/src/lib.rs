//! Shared fixtures for the criterion benches.

use kws_core::audio::AudioBuffer;
use kws_core::nn::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(shape: Vec<usize>, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

pub fn one_second_tone(hz: f32) -> AudioBuffer {
    AudioBuffer::new(
        (0..16_000)
            .map(|t| 0.5 * (2.0 * std::f32::consts::PI * hz * t as f32 / 16_000.0).sin())
            .collect(),
    )
}
