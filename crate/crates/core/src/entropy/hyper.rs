//! Hyper-prior networks and the factorized prior on the hyper-latent.

use ecat_runtime::{ParamId, ParamKind, ParamStore, Result, Scalar, Tape, Tensor, Var};
use rand::Rng;

use crate::config::{ModelConfig, LEAKY_SLOPE};
use crate::entropy::likelihood::SCALE_MIN;
use crate::layers::{leaky_gain, Conv, Deconv};

#[derive(Debug, Clone)]
pub struct HyperPrior {
    pub encoder: [Conv; 3],
    pub decoder: [Deconv; 3],
    /// Per-channel logistic location of the factorized prior.
    pub loc: ParamId,
    /// Pre-softplus logistic scale.
    pub scale_raw: ParamId,
    channels_m: usize,
    padding: (usize, usize, usize, usize),
}

impl HyperPrior {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut R) -> Self {
        let (n, m) = (cfg.channels_n, cfg.channels_m);
        let g = leaky_gain();
        let encoder = [
            Conv::new(store, "hyper.enc0", 3, m, n, 1, g, rng),
            Conv::new(store, "hyper.enc1", 5, n, n, 2, g, rng),
            Conv::new(store, "hyper.enc2", 5, n, n, 2, 1.0, rng),
        ];
        let decoder = [
            Deconv::new(store, "hyper.dec0", 5, n, n, 2, g, rng),
            Deconv::new(store, "hyper.dec1", 5, n, n, 2, g, rng),
            Deconv::new(store, "hyper.dec2", 3, n, 2 * m, 1, 1.0, rng),
        ];
        // softplus(ln(e - 1)) = 1: unit logistic scale at initialization.
        let unit = (std::f64::consts::E - 1.0).ln();
        Self {
            encoder,
            decoder,
            loc: store.add("hyper.prior.loc", Tensor::zeros(&[n]), ParamKind::NoDecay),
            scale_raw: store.add("hyper.prior.scale", Tensor::full(&[n], T::from_f64(unit)), ParamKind::NoDecay),
            channels_m: m,
            padding: cfg.hyper_padding(),
        }
    }

    /// `z: [B,h,w,M]` -> `h: [B,ceil(h/4),ceil(w/4),N]`.
    pub fn encode<T: Scalar>(&self, tape: &Tape<T>, store: &ParamStore<T>, z: Var) -> Result<Var> {
        let mut x = if self.padding == (0, 0, 0, 0) {
            z
        } else {
            tape.pad_spatial(z, self.padding)
        };
        for (i, layer) in self.encoder.iter().enumerate() {
            x = layer.forward(tape, store, x)?;
            if i < 2 {
                x = tape.leaky_relu(x, LEAKY_SLOPE);
            }
        }
        Ok(x)
    }

    /// `h` -> `(mu, sigma)`, each `[B,h,w,M]`; sigma is softplus plus a floor.
    pub fn decode<T: Scalar>(&self, tape: &Tape<T>, store: &ParamStore<T>, h: Var) -> Result<(Var, Var)> {
        let mut x = h;
        for (i, layer) in self.decoder.iter().enumerate() {
            x = layer.forward(tape, store, x)?;
            if i < 2 {
                x = tape.leaky_relu(x, LEAKY_SLOPE);
            }
        }
        if self.padding != (0, 0, 0, 0) {
            x = tape.crop_spatial(x, self.padding);
        }
        let m = self.channels_m;
        let axis = tape.shape(x).len() - 1;
        let mu = tape.slice(x, axis, 0, m);
        let raw = tape.slice(x, axis, m, m);
        let sigma = tape.add_scalar(tape.softplus(raw), SCALE_MIN);
        Ok((mu, sigma))
    }

    /// `(loc, scale)` of the factorized prior, each `[N]`.
    pub fn prior<T: Scalar>(&self, tape: &Tape<T>, store: &ParamStore<T>) -> (Var, Var) {
        let loc = tape.param(store, self.loc);
        let raw = tape.param(store, self.scale_raw);
        (loc, tape.add_scalar(tape.softplus(raw), SCALE_MIN))
    }
}
