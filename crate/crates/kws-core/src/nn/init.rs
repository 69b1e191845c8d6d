//! Weight initialization.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Tensor;

/// Kaiming fan-in normal init: std = sqrt(2 / fan_in), where fan_in is the
/// product of all non-leading dims (C * kh * kw for conv weights).
pub fn kaiming_normal<R: Rng>(shape: Vec<usize>, rng: &mut R) -> Tensor {
    let fan_in: usize = shape[1..].iter().product();
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("valid std");
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| dist.sample(rng) as f32).collect();
    Tensor::new(shape, data)
}
