//! The full network: analysis transform, hyper-prior, Transformer head and
//! reconstructor, plus the input normalization statistics.

use ecat_runtime::{ParamId, ParamKind, ParamStore, Result, Scalar, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ModelConfig, Stage};
use crate::encoder::{quantize_train, AnalysisTransform};
use crate::entropy::{gaussian_rate, logistic_rate, HyperPrior};
use crate::error::CodecError;
use crate::reconstructor::{FeatureAggregation, Keep, SynthesisTransform};
use crate::transformer::TransformerHead;

/// Layer handles; parameter values live in a separate store.
#[derive(Debug, Clone)]
pub struct Architecture {
    pub config: ModelConfig,
    pub encoder: AnalysisTransform,
    pub hyper: HyperPrior,
    pub head: TransformerHead,
    pub aggregation: FeatureAggregation,
    pub synthesis: SynthesisTransform,
    pub norm_mean: ParamId,
    pub norm_std: ParamId,
}

#[derive(Debug, Clone)]
pub struct Model<T: Scalar = f32> {
    pub arch: Architecture,
    pub store: ParamStore<T>,
}

/// Graph nodes of a training forward pass.
#[derive(Debug, Clone, Copy)]
pub struct TrainForward {
    pub logits: Var,
    /// Reconstruction in the `[0,1]` pixel domain, unclamped.
    pub recon: Var,
    /// Summed bits of the whole batch; absent in pretraining.
    pub rate_bits: Option<Var>,
}

impl Model<f32> {
    pub fn new(config: ModelConfig, seed: u64) -> crate::error::Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = AnalysisTransform::new(&mut store, &config, &mut rng);
        let hyper = HyperPrior::new(&mut store, &config, &mut rng);
        let head = TransformerHead::new(&mut store, &config, &mut rng);
        let aggregation = FeatureAggregation::new(&mut store, &config, &mut rng);
        let synthesis = SynthesisTransform::new(&mut store, &config, &mut rng);
        let norm_mean = store.add("norm.mean", Tensor::full(&[3], 0.5), ParamKind::Buffer);
        let norm_std = store.add("norm.std", Tensor::full(&[3], 0.25), ParamKind::Buffer);
        for id in [norm_mean, norm_std] {
            store.get_mut(id).trainable = false;
        }
        Ok(Self {
            arch: Architecture { config, encoder, hyper, head, aggregation, synthesis, norm_mean, norm_std },
            store,
        })
    }
}

impl<T: Scalar> Model<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.arch.config
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model { arch: self.arch.clone(), store: self.store.cast() }
    }

    /// Per-channel input statistics in the `[0,1]` domain.
    pub fn set_normalization(&mut self, mean: [f64; 3], std: [f64; 3]) -> crate::error::Result<()> {
        if std.iter().any(|s| !(*s > 0.0)) {
            return Err(CodecError::Config("normalization std must be positive".into()));
        }
        let m = Tensor::from_f64(&[3], &mean)?;
        let s = Tensor::from_f64(&[3], &std)?;
        self.store.set_value(self.arch.norm_mean, m)?;
        self.store.set_value(self.arch.norm_std, s)?;
        Ok(())
    }

    pub fn normalization(&self) -> ([f64; 3], [f64; 3]) {
        let get = |id| {
            let v: &Tensor<T> = self.store.value(id);
            [v.data()[0].as_f64(), v.data()[1].as_f64(), v.data()[2].as_f64()]
        };
        (get(self.arch.norm_mean), get(self.arch.norm_std))
    }

    fn normalize(&self, tape: &Tape<T>, x: Var) -> Var {
        let (mean, std) = self.normalization();
        let scale: Vec<f64> = std.iter().map(|s| 1.0 / s).collect();
        let shift: Vec<f64> = mean.iter().zip(&std).map(|(m, s)| -m / s).collect();
        tape.channel_affine(x, &scale, &shift)
    }

    fn denormalize(&self, tape: &Tape<T>, x: Var) -> Var {
        let (mean, std) = self.normalization();
        tape.channel_affine(x, &std, &mean)
    }

    /// `[B,H,W,3]` unit-range pixels -> latent `z`.
    pub fn analyze(&self, tape: &Tape<T>, x: Var) -> Result<Var> {
        let xn = self.normalize(tape, x);
        self.arch.encoder.forward(tape, &self.store, xn)
    }

    pub fn hyper_encode(&self, tape: &Tape<T>, z: Var) -> Result<Var> {
        self.arch.hyper.encode(tape, &self.store, z)
    }

    pub fn hyper_decode(&self, tape: &Tape<T>, h: Var) -> Result<(Var, Var)> {
        self.arch.hyper.decode(tape, &self.store, h)
    }

    /// Factorized prior `(loc, scale)`.
    pub fn prior(&self, tape: &Tape<T>) -> (Var, Var) {
        self.arch.hyper.prior(tape, &self.store)
    }

    /// Class logits `[B,K]` from a latent.
    pub fn classify_latent(&self, tape: &Tape<T>, zhat: Var) -> Result<Var> {
        let (seq, _) = self.arch.head.embed(tape, &self.store, zhat)?;
        let out = self.arch.head.forward(tape, &self.store, seq)?;
        self.arch.head.logits(tape, &self.store, out.class_token)
    }

    /// `(logits, reconstruction)` from a latent, with optional feature ablation.
    pub fn decode_latent(&self, tape: &Tape<T>, zhat: Var, keep: Keep) -> Result<(Var, Var)> {
        let head = &self.arch.head;
        let (seq, z0) = head.embed(tape, &self.store, zhat)?;
        let out = head.forward(tape, &self.store, seq)?;
        let logits = head.logits(tape, &self.store, out.class_token)?;
        let fused = self.arch.aggregation.forward(tape, &self.store, z0, &out.intermediates, keep)?;
        let xn = self.arch.synthesis.forward(tape, &self.store, fused)?;
        Ok((logits, self.denormalize(tape, xn)))
    }

    /// Training forward pass. Pretraining feeds `z` straight through;
    /// the full stage adds quantization noise and prices the latents.
    pub fn forward_train<R: Rng + ?Sized>(
        &self,
        tape: &Tape<T>,
        x: Var,
        stage: Stage,
        rng: &mut R,
    ) -> Result<TrainForward> {
        let z = self.analyze(tape, x)?;
        let (latent, rate_bits) = match stage {
            Stage::Pretrain => (z, None),
            Stage::Full => {
                let zt = quantize_train(tape, z, rng);
                let h = self.hyper_encode(tape, z)?;
                let ht = quantize_train(tape, h, rng);
                let (mu, sigma) = self.hyper_decode(tape, ht)?;
                let (loc, scale) = self.prior(tape);
                let main = gaussian_rate(tape, zt, mu, sigma)?;
                let side = logistic_rate(tape, ht, loc, scale)?;
                (zt, Some(tape.add(main, side)))
            }
        };
        let (logits, recon) = self.decode_latent(tape, latent, Keep::ALL)?;
        Ok(TrainForward { logits, recon, rate_bits })
    }

    /// Parameters that receive gradient updates.
    pub fn trainable(&self) -> Vec<ParamId> {
        self.store
            .iter()
            .filter(|(_, p)| p.trainable && p.kind != ParamKind::Buffer)
            .map(|(id, _)| id)
            .collect()
    }
}
