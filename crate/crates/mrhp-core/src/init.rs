//! Seeded parameter initialization helpers.
//!
//! Weight matrices use uniform(−1/√fan_in, +1/√fan_in) with fan_in the input
//! width; embeddings use N(0, 0.1). Both draw from a caller-provided stream
//! so model construction is deterministic in the seed.

use crate::tensor::Tensor;
use rand::Rng;

pub(crate) fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller; two uniforms per draw keeps the stream layout simple.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub(crate) fn uniform_fan_in<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let bound = 1.0 / (rows as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::matrix(rows, cols, data).expect("finite init")
}

/// Rank-3 kernel tensor with fan_in = w · d_in.
pub(crate) fn uniform_fan_in_3d<R: Rng>(rng: &mut R, w: usize, d_in: usize, d_out: usize) -> Tensor {
    let bound = 1.0 / ((w * d_in) as f64).sqrt();
    let data = (0..w * d_in * d_out)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::new(vec![w, d_in, d_out], data).expect("finite init")
}

/// Vector with fan_in = its own length.
pub(crate) fn uniform_vec<R: Rng>(rng: &mut R, len: usize) -> Tensor {
    let bound = 1.0 / (len as f64).sqrt();
    let data = (0..len).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::vector(data).expect("finite init")
}

pub(crate) fn normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| std * standard_normal(rng))
        .collect();
    Tensor::matrix(rows, cols, data).expect("finite init")
}

pub(crate) fn ones(len: usize) -> Tensor {
    Tensor::vector(vec![1.0; len]).expect("finite init")
}

pub(crate) fn zeros_vec(len: usize) -> Tensor {
    Tensor::zeros(vec![len])
}
