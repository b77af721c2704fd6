//! Analysis transform and the two quantizers.

use ecat_runtime::{ParamStore, Result, Scalar, Tape, Tensor, Var};
use rand::Rng;

use crate::config::{ModelConfig, LEAKY_SLOPE};
use crate::error::CodecError;
use crate::layers::{leaky_gain, Conv};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantizerMode {
    /// Uniform noise relaxation; training only.
    AdditiveNoise,
    /// Round half away from zero; coding and evaluation.
    Round,
}

/// Four stride-2 5x5 convolutions, widths `[N, N, N, M]`.
#[derive(Debug, Clone)]
pub struct AnalysisTransform {
    pub layers: [Conv; 4],
}

impl AnalysisTransform {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut R) -> Self {
        let (n, m) = (cfg.channels_n, cfg.channels_m);
        let widths = [(3, n), (n, n), (n, n), (n, m)];
        let layers = std::array::from_fn(|i| {
            let gain = if i < 3 { leaky_gain() } else { 1.0 };
            let (cin, cout) = widths[i];
            Conv::new(store, &format!("encoder.conv{i}"), 5, cin, cout, 2, gain, rng)
        });
        Self { layers }
    }

    /// `x: [B,H,W,3]` normalized -> `z: [B,H/16,W/16,M]`.
    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, store, h)?;
            if i < 3 {
                h = tape.leaky_relu(h, LEAKY_SLOPE);
            }
        }
        Ok(h)
    }
}

/// Checks an image batch against the configured input size.
pub fn check_input_shape(cfg: &ModelConfig, shape: &[usize]) -> Result<(), CodecError> {
    if shape.len() != 4 || shape[1] != cfg.input_h || shape[2] != cfg.input_w || shape[3] != 3 {
        return Err(CodecError::Config(format!(
            "input {shape:?} does not match configured [B,{},{},3]",
            cfg.input_h, cfg.input_w
        )));
    }
    Ok(())
}

/// Number of noise levels; a coarse grid keeps `|u| < 1/2` strict even after
/// 32-bit rounding of `z + u` for any realistic latent magnitude.
const NOISE_LEVELS: u32 = 1 << 16;

/// Samples `u ~ U(-1/2, 1/2)` on a symmetric grid with mean exactly zero.
pub fn uniform_noise<T: Scalar, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let k = rng.random_range(0..NOISE_LEVELS);
            T::from_f64((f64::from(k) + 0.5) / f64::from(NOISE_LEVELS) - 0.5)
        })
        .collect();
    Tensor::new(shape, data).expect("consistent shape")
}

/// `z + u` with identity gradient.
pub fn quantize_train<T: Scalar, R: Rng + ?Sized>(tape: &Tape<T>, z: Var, rng: &mut R) -> Var {
    let noise = tape.constant(uniform_noise(&tape.shape(z), rng));
    tape.add(z, noise)
}

/// Elementwise round half away from zero.
pub fn quantize_eval<T: Scalar>(z: &Tensor<T>) -> Tensor<T> {
    z.map(|v| T::from_f64(v.as_f64().round()))
}
