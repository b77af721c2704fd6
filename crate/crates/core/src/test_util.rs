use ecat_runtime::{Scalar, Tensor};
use rand::Rng;

pub fn random_tensor<T: Scalar>(shape: &[usize], scale: f64, rng: &mut impl Rng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(rng.random_range(-scale..scale))).collect();
    Tensor::new(shape, data).unwrap()
}
