//! Parameter handles for the fixed layer set. Values live in a
//! [`ParamStore`]; handles are plain ids, so one architecture description
//! serves both the 32-bit training store and its 64-bit verification cast.

use ecat_runtime::{init, ParamId, ParamKind, ParamStore, Result, Scalar, Tape, Var};
use rand::Rng;

use crate::config::LEAKY_SLOPE;

/// Gain for He initialization before a LeakyReLU.
pub(crate) fn leaky_gain() -> f64 {
    (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt()
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        kernel: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let w = init::he_uniform(&[kernel, kernel, cin, cout], kernel * kernel * cin, gain, rng);
        Self {
            w: store.add(format!("{name}.weight"), w, ParamKind::Weight),
            b: store.add(format!("{name}.bias"), ecat_runtime::Tensor::zeros(&[cout]), ParamKind::NoDecay),
            stride,
            pad: kernel / 2,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let (w, b) = (tape.param(store, self.w), tape.param(store, self.b));
        tape.conv2d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Debug, Clone)]
pub struct Deconv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
    pub output_padding: usize,
}

impl Deconv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        kernel: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        // Each output pixel sees roughly (k/s)^2 taps per input channel.
        let fan_in = (kernel * kernel * cin).div_ceil(stride * stride);
        let w = init::he_uniform(&[kernel, kernel, cout, cin], fan_in, gain, rng);
        Self {
            w: store.add(format!("{name}.weight"), w, ParamKind::Weight),
            b: store.add(format!("{name}.bias"), ecat_runtime::Tensor::zeros(&[cout]), ParamKind::NoDecay),
            stride,
            pad: kernel / 2,
            output_padding: stride - 1,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let (w, b) = (tape.param(store, self.w), tape.param(store, self.b));
        tape.deconv2d(x, w, b, self.stride, self.pad, self.output_padding)
    }
}

/// Affine map over the channel axis; a 1x1 convolution on images.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, w: ecat_runtime::Tensor<T>) -> Self {
        let cout = w.shape()[1];
        Self {
            w: store.add(format!("{name}.weight"), w, ParamKind::Weight),
            b: store.add(format!("{name}.bias"), ecat_runtime::Tensor::zeros(&[cout]), ParamKind::NoDecay),
        }
    }

    /// Transformer-style init: truncated normal, std 0.02.
    pub fn trunc<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        rng: &mut R,
    ) -> Self {
        Self::new(store, name, init::trunc_normal(&[cin, cout], 0.02, rng))
    }

    /// Convolution-style init: He uniform with unit gain.
    pub fn he<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        rng: &mut R,
    ) -> Self {
        Self::new(store, name, init::he_uniform(&[cin, cout], cin, 1.0, rng))
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let (w, b) = (tape.param(store, self.w), tape.param(store, self.b));
        tape.linear(x, w, Some(b))
    }
}

#[derive(Debug, Clone)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, c: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), ecat_runtime::Tensor::full(&[c], T::one()), ParamKind::NoDecay),
            beta: store.add(format!("{name}.beta"), ecat_runtime::Tensor::zeros(&[c]), ParamKind::NoDecay),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let (g, b) = (tape.param(store, self.gamma), tape.param(store, self.beta));
        tape.layer_norm(x, g, b, crate::config::LN_EPS)
    }
}
