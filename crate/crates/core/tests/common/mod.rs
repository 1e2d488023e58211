#![allow(dead_code)]

pub mod equivariance;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unik::data::{JointLayout, SynthSpec};
use unik::tensor::Real;
use unik::{NetworkConfig, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform entries in `[-scale, scale]`.
pub fn random<T: Real>(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::from_f64(shape.to_vec(), &data).unwrap()
}

/// The small network used by the gradient checks.
pub fn tiny_config(num_classes: usize) -> NetworkConfig {
    NetworkConfig {
        channels: vec![8, 8, 16],
        dilations: vec![1, 2, 1],
        kernel: 3,
        heads: 3,
        tau: 1,
        joints: 5,
        in_channels: 2,
        num_classes,
        persons: 1,
    }
}

/// A fast network for end-to-end workflow tests.
pub fn small_config(joints: usize, num_classes: usize) -> NetworkConfig {
    NetworkConfig {
        channels: vec![8, 8, 16],
        dilations: vec![1, 2, 1],
        kernel: 3,
        heads: 2,
        tau: 1,
        joints,
        in_channels: 2,
        num_classes,
        persons: 1,
    }
}

pub fn small_synth(num_classes: usize, per_class: usize, frames: usize, seed: u64) -> SynthSpec {
    let mut spec = SynthSpec::new(num_classes, per_class, frames, JointLayout::posetics17());
    spec.seed = seed;
    spec
}
