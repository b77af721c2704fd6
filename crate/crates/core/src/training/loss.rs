//! Joint rate-distortion-accuracy objective.

use ecat_runtime::{Result, Scalar, Tape, Tensor, Var};
use rand::Rng;

use crate::config::Stage;
use crate::model::Model;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub stage: Stage,
}

impl LossWeights {
    /// Stage-1 weights: alpha 1, beta 0.001, no rate term.
    pub const PRETRAIN: LossWeights = LossWeights { alpha: 1.0, beta: 0.001, stage: Stage::Pretrain };

    pub fn full(alpha: f64, beta: f64) -> Self {
        Self { alpha, beta, stage: Stage::Full }
    }

    /// Full-stage weights at a fixed `alpha / beta` ratio.
    pub fn with_ratio(alpha: f64, ratio: f64) -> Self {
        Self::full(alpha, alpha / ratio)
    }
}

/// Scalar values of one evaluation of the objective.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    /// Mean cross-entropy, natural log.
    pub ce: f64,
    /// Squared error summed over pixels and channels, mean over the batch.
    pub sse: f64,
    /// Rate term as it enters the objective: bits per pixel.
    pub rate_bpp: f64,
    /// Mean bits per image.
    pub rate_bits: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct LossOutput {
    pub total: Var,
    pub parts: LossParts,
}

/// `alpha * CE + beta * SSE + rate`, with the rate expressed in bits per
/// pixel and every term averaged over the batch.
#[allow(clippy::too_many_arguments)]
pub fn objective<T: Scalar>(
    tape: &Tape<T>,
    logits: Var,
    labels: &[usize],
    recon: Var,
    target: Var,
    rate_bits: Option<Var>,
    weights: LossWeights,
    pixels: usize,
) -> Result<LossOutput> {
    let batch = labels.len() as f64;
    let ce = tape.cross_entropy(logits, labels)?;
    let diff = tape.sub(recon, target);
    let sse = tape.scale(tape.sum(tape.mul(diff, diff)), 1.0 / batch);
    let mut total = tape.add(tape.scale(ce, weights.alpha), tape.scale(sse, weights.beta));
    let mut rate_bpp = 0.0;
    let mut rate_mean = 0.0;
    if let (Stage::Full, Some(bits)) = (weights.stage, rate_bits) {
        let per_pixel = tape.scale(bits, 1.0 / (batch * pixels as f64));
        total = tape.add(total, per_pixel);
        rate_bpp = tape.value(per_pixel).item().as_f64();
        rate_mean = tape.value(bits).item().as_f64() / batch;
    }
    tape.check_finite(total, "joint_loss")?;
    let parts = LossParts {
        total: tape.value(total).item().as_f64(),
        ce: tape.value(ce).item().as_f64(),
        sse: tape.value(sse).item().as_f64(),
        rate_bpp,
        rate_bits: rate_mean,
    };
    Ok(LossOutput { total, parts })
}

/// Forward pass plus objective on a `[B,H,W,3]` unit-range batch.
pub fn joint_loss<T: Scalar, R: Rng + ?Sized>(
    tape: &Tape<T>,
    model: &Model<T>,
    x: &Tensor<T>,
    labels: &[usize],
    weights: LossWeights,
    rng: &mut R,
) -> Result<LossOutput> {
    let target = tape.constant(x.clone());
    let out = model.forward_train(tape, target, weights.stage, rng)?;
    objective(tape, out.logits, labels, out.recon, target, out.rate_bits, weights, model.config().pixels())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_prediction_costs_nothing() {
        let tape = Tape::<f64>::new();
        let logits = tape.leaf(Tensor::from_f64(&[2, 3], &[800.0, 0.0, 0.0, 0.0, 0.0, 900.0]).unwrap());
        let x = tape.constant(Tensor::full(&[2, 4, 4, 3], 0.3));
        let out = objective(&tape, logits, &[0, 2], x, x, None, LossWeights::PRETRAIN, 16).unwrap();
        assert_eq!(out.parts.total, 0.0);
    }

    #[test]
    fn uniform_classifier_costs_ln_k() {
        let tape = Tape::<f64>::new();
        let logits = tape.leaf(Tensor::zeros(&[3, 10]));
        let x = tape.constant(Tensor::full(&[3, 4, 4, 3], 0.3));
        let out = objective(&tape, logits, &[1, 4, 9], x, x, None, LossWeights::PRETRAIN, 16).unwrap();
        assert!((out.parts.ce - 10f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn total_matches_independent_recomputation() {
        let model = Model::new(ModelConfig::desk(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = crate::test_util::random_tensor::<f32>(&[2, 64, 64, 3], 0.5, &mut rng).map(|v| v + 0.5);
        let labels = [3usize, 7];
        let w = LossWeights::full(0.3, 0.003);
        let tape = Tape::new();
        let target = tape.constant(x.clone());
        let fwd = model.forward_train(&tape, target, Stage::Full, &mut rng).unwrap();
        let out = objective(&tape, fwd.logits, &labels, fwd.recon, target, fwd.rate_bits, w, 4096).unwrap();

        let logits = tape.value(fwd.logits);
        let mut ce = 0.0;
        for (row, &y) in logits.data().chunks(10).zip(&labels) {
            let m = row.iter().fold(f64::MIN, |a, &v| a.max(f64::from(v)));
            let lse = m + row.iter().map(|&v| (f64::from(v) - m).exp()).sum::<f64>().ln();
            ce += lse - f64::from(row[y]);
        }
        ce /= 2.0;
        let recon = tape.value(fwd.recon);
        let sse: f64 = recon
            .data()
            .iter()
            .zip(x.data())
            .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
            .sum::<f64>()
            / 2.0;
        let bits = f64::from(tape.value(fwd.rate_bits.unwrap()).item());
        let expect = w.alpha * ce + w.beta * sse + bits / (2.0 * 4096.0);
        let p = out.parts;
        assert!((p.total - expect).abs() <= 1e-6 * expect, "{} vs {expect}", p.total);
        assert!((p.total - (w.alpha * p.ce + w.beta * p.sse + p.rate_bpp)).abs() <= 1e-6 * expect);
        assert!(p.ce >= 0.0 && p.sse >= 0.0 && p.rate_bpp > 0.0);
    }

    #[test]
    fn pretraining_is_deterministic() {
        let model = Model::new(ModelConfig::desk(), 2).unwrap();
        let x = Tensor::<f32>::full(&[2, 64, 64, 3], 0.4);
        let run = |seed| {
            let tape = Tape::new();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            joint_loss(&tape, &model, &x, &[0, 1], LossWeights::PRETRAIN, &mut rng).unwrap().parts
        };
        assert_eq!(run(1), run(2));
    }
}
