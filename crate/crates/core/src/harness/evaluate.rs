//! Scoring a model on a dataset through real bitstreams.

use ecat_runtime::{Scalar, Tape};

use crate::codec::{classify, compress, deserialize, reconstruct, top_k};
use crate::entropy::Bitstream;
use crate::error::Result;
use crate::harness::dataset::Dataset;
use crate::harness::metrics::psnr;
use crate::image::Image;
use crate::model::Model;
use crate::reconstructor::Keep;

/// One operating point on the rate-distortion-accuracy curves.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub bpp: f64,
    pub psnr: f64,
    pub top1: f64,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub checkpoint: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageScore {
    pub bytes: usize,
    pub psnr: f64,
    pub predicted: usize,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub record: MetricRecord,
    pub images: Vec<ImageScore>,
}

/// Identifies the run a record came from.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTag {
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub checkpoint: String,
}

/// Compresses every image to bytes, parses them back and scores the
/// receiver: top-1 from the decoded latent, PSNR of the clamped 8-bit
/// reconstruction. `bpp` counts whole files, headers included.
pub fn evaluate<T: Scalar>(model: &Model<T>, data: &Dataset, keep: Keep, tag: &RunTag) -> Result<Evaluation> {
    let mut images = Vec::with_capacity(data.len());
    for (img, &label) in data.images.iter().zip(&data.labels) {
        let bytes = compress(model, img)?.to_bytes();
        let pack = deserialize(model, &Bitstream::from_bytes(&bytes)?)?;
        let predicted = top_k(&classify(model, &pack)?, 1)[0].0;
        let recon = reconstruct(model, &pack, keep)?;
        images.push(ImageScore { bytes: bytes.len(), psnr: psnr(img, &recon), predicted, label });
    }
    Ok(Evaluation { record: aggregate(&images, data, tag), images })
}

fn aggregate(images: &[ImageScore], data: &Dataset, tag: &RunTag) -> MetricRecord {
    let n = images.len().max(1) as f64;
    let pixels: usize = data.images.iter().map(|i| i.pixels()).sum();
    let bits: usize = images.iter().map(|s| s.bytes * 8).sum();
    MetricRecord {
        bpp: bits as f64 / pixels.max(1) as f64,
        psnr: images.iter().map(|s| s.psnr).sum::<f64>() / n,
        top1: images.iter().filter(|s| s.predicted == s.label).count() as f64 / n,
        alpha: tag.alpha,
        beta: tag.beta,
        seed: tag.seed,
        checkpoint: tag.checkpoint.clone(),
    }
}

/// Mean PSNR for each aggregation setting, every image coded once.
pub fn ablate<T: Scalar>(model: &Model<T>, data: &Dataset, ladder: &[Keep]) -> Result<Vec<(Keep, f64)>> {
    let mut sums = vec![0.0; ladder.len()];
    for img in &data.images {
        let bytes = compress(model, img)?.to_bytes();
        let pack = deserialize(model, &Bitstream::from_bytes(&bytes)?)?;
        for (s, &keep) in sums.iter_mut().zip(ladder) {
            *s += psnr(img, &reconstruct(model, &pack, keep)?);
        }
    }
    let n = data.len().max(1) as f64;
    Ok(ladder.iter().zip(sums).map(|(&k, s)| (k, s / n)).collect())
}

/// Full aggregation first, then dropping the deepest tapped block each rung.
pub fn ablation_ladder() -> Vec<Keep> {
    (0..=3).rev().map(Keep::first).collect()
}

/// Mean cross-entropy and PSNR with the latent passed through unquantized,
/// as seen by stage-1 training (no augmentation).
pub fn continuous_metrics<T: Scalar>(model: &Model<T>, data: &Dataset) -> Result<(f64, f64)> {
    let (mut ce, mut db) = (0.0, 0.0);
    let cfg = model.config();
    for (img, &label) in data.images.iter().zip(&data.labels) {
        let tape = Tape::inference();
        let x = tape.constant(Image::batch::<T>(&[img])?);
        let z = model.analyze(&tape, x)?;
        let (logits, recon) = model.decode_latent(&tape, z, Keep::ALL)?;
        ce += tape.value(tape.cross_entropy(logits, &[label])?).data()[0].as_f64();
        db += psnr(img, &Image::from_unit(cfg.input_w, cfg.input_h, tape.value(recon).data())?);
    }
    let n = data.len().max(1) as f64;
    Ok((ce / n, db / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::harness::synth;

    fn tiny() -> ModelConfig {
        ModelConfig { input_h: 32, input_w: 32, num_classes: 10, ..ModelConfig::desk() }
    }

    fn tag() -> RunTag {
        RunTag { alpha: 0.3, beta: 0.003, seed: 1, checkpoint: "t".into() }
    }

    #[test]
    fn bpp_is_total_bytes_over_pixels() {
        let model = Model::new(tiny(), 4).unwrap();
        let data = synth::generate(5, 32, 9);
        let ev = evaluate(&model, &data, Keep::ALL, &tag()).unwrap();
        let manual: usize = data.images.iter().map(|i| compress(&model, i).unwrap().to_bytes().len()).sum();
        assert_eq!(ev.record.bpp, (manual * 8) as f64 / (5 * 32 * 32) as f64);
        assert_eq!(ev.images.len(), 5);
    }

    #[test]
    fn evaluation_is_reproducible() {
        let model = Model::new(tiny(), 4).unwrap();
        let data = synth::generate(4, 32, 2);
        let a = evaluate(&model, &data, Keep::ALL, &tag()).unwrap();
        let b = evaluate(&model, &data, Keep::ALL, &tag()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn random_head_is_near_chance() {
        // 200 images, K = 10: a 99.9% binomial interval around 0.1 is about
        // +/- 0.07. An untrained head may still favour a few classes, so the
        // check is one-sided on the high end plus a sanity lower bound.
        let model = Model::new(tiny(), 21).unwrap();
        let data = synth::generate(200, 32, 5);
        let ev = evaluate(&model, &data, Keep::ALL, &tag()).unwrap();
        assert!(ev.record.top1 <= 0.1 + 0.07, "top1 {}", ev.record.top1);
    }

    #[test]
    fn ladder_order_and_full_rung_matches_evaluate() {
        let ladder = ablation_ladder();
        assert_eq!(ladder, vec![Keep::ALL, Keep::first(2), Keep::first(1), Keep::NONE]);
        let model = Model::new(tiny(), 4).unwrap();
        let data = synth::generate(3, 32, 2);
        let rungs = ablate(&model, &data, &ladder).unwrap();
        let ev = evaluate(&model, &data, Keep::ALL, &tag()).unwrap();
        assert!((rungs[0].1 - ev.record.psnr).abs() < 1e-12);
    }
}
