//! Parameter initializers.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Normal(0, std) truncated to two standard deviations by resampling.
pub fn trunc_normal<T: Scalar, R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<T> {
    let normal = Normal::new(0.0, std).expect("finite std");
    let numel = shape.iter().product();
    let data = (0..numel)
        .map(|_| loop {
            let v: f64 = normal.sample(rng);
            if v.abs() <= 2.0 * std {
                break T::from_f64(v);
            }
        })
        .collect();
    Tensor::new(shape, data).expect("consistent shape")
}

/// He-style uniform initialization for a layer with the given fan-in.
pub fn he_uniform<T: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    gain: f64,
    rng: &mut R,
) -> Tensor<T> {
    let bound = gain * (3.0 / fan_in as f64).sqrt();
    uniform(shape, -bound, bound, rng)
}

pub fn uniform<T: Scalar, R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Tensor<T> {
    let dist = Uniform::new_inclusive(lo, hi).expect("valid range");
    let numel = shape.iter().product();
    let data = (0..numel).map(|_| T::from_f64(dist.sample(rng))).collect();
    Tensor::new(shape, data).expect("consistent shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn trunc_normal_respects_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t: Tensor<f32> = trunc_normal(&[1000], 0.02, &mut rng);
        assert!(t.data().iter().all(|v| v.abs() <= 0.04));
        let mean = t.sum() / 1000.0;
        assert!(mean.abs() < 0.003);
    }
}
