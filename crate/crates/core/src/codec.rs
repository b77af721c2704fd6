//! Real coding: image to [`LatentPack`] to [`Bitstream`] and back, plus the
//! receiver-side classification and reconstruction that consume only a pack.

use ecat_runtime::{Scalar, Tape, Tensor};

use crate::entropy::range_coder::{decode_with, encode_with};
use crate::entropy::{hyper_tables, main_tables, pack_bits, Bitstream, LatentPack};
use crate::error::{CodecError, Result};
use crate::image::Image;
use crate::model::Model;
use crate::reconstructor::Keep;

fn to_ints<T: Scalar>(t: &Tensor<T>) -> Vec<i32> {
    t.data().iter().map(|v| v.as_f64().round() as i32).collect()
}

fn dims3(shape: &[usize]) -> [usize; 3] {
    [shape[1], shape[2], shape[3]]
}

/// Sender side: encode, round, hyper-encode, round.
pub fn analyze<T: Scalar>(model: &Model<T>, image: &Image) -> Result<LatentPack> {
    let cfg = model.config();
    if (image.height, image.width) != (cfg.input_h, cfg.input_w) {
        return Err(CodecError::Config(format!(
            "image {}x{} does not match configured {}x{}",
            image.width, image.height, cfg.input_w, cfg.input_h
        )));
    }
    let tape = Tape::inference();
    let x = tape.constant(Image::batch::<T>(&[image])?);
    let z = model.analyze(&tape, x)?;
    let h = model.hyper_encode(&tape, z)?;
    let (zv, hv) = (tape.value(z), tape.value(h));
    LatentPack::new(dims3(zv.shape()), to_ints(&zv), dims3(hv.shape()), to_ints(&hv))
}

/// Decoded hyper parameters `(mu, sigma)` for an integer hyper-latent.
pub fn hyper_params<T: Scalar>(model: &Model<T>, pack: &LatentPack) -> Result<(Vec<f64>, Vec<f64>)> {
    let tape = Tape::inference();
    let [a, b, c] = pack.hyper_shape;
    let h = Tensor::new(&[1, a, b, c], pack.h.iter().map(|&v| T::from_f64(f64::from(v))).collect())?;
    let (mu, sigma) = model.hyper_decode(&tape, tape.constant(h))?;
    let f = |t: &Tensor<T>| t.data().iter().map(|v| v.as_f64()).collect::<Vec<f64>>();
    let (mu, sigma) = (f(&tape.value(mu)), f(&tape.value(sigma)));
    if mu.len() != pack.z.len() {
        return Err(CodecError::Corrupt("hyper decoder output does not match latent".into()));
    }
    Ok((mu, sigma))
}

/// Factorized prior parameters as 64-bit values.
pub fn prior_params<T: Scalar>(model: &Model<T>) -> (Vec<f64>, Vec<f64>) {
    let tape = Tape::inference();
    let (loc, scale) = model.prior(&tape);
    let f = |t: &Tensor<T>| t.data().iter().map(|v| v.as_f64()).collect::<Vec<f64>>();
    (f(&tape.value(loc)), f(&tape.value(scale)))
}

/// Estimated code length of a pack in bits, hyper-latent included.
pub fn rate_estimate<T: Scalar>(model: &Model<T>, pack: &LatentPack) -> Result<f64> {
    let (mu, sigma) = hyper_params(model, pack)?;
    let (loc, scale) = prior_params(model);
    Ok(pack_bits(pack, &mu, &sigma, &loc, &scale))
}

fn i16_bound(v: i32) -> Result<i16> {
    i16::try_from(v).map_err(|_| CodecError::OutOfAlphabet {
        symbol: v,
        min: i32::from(i16::MIN),
        max: i32::from(i16::MAX),
    })
}

pub fn serialize<T: Scalar>(model: &Model<T>, pack: &LatentPack) -> Result<Bitstream> {
    pack.validate()?;
    let cfg = model.config();
    if pack.latent_shape != [cfg.latent_hw().0, cfg.latent_hw().1, cfg.channels_m] {
        return Err(CodecError::Corrupt(format!("pack shape {:?} does not match the model", pack.latent_shape)));
    }
    let (loc, scale) = prior_params(model);
    let n = loc.len();
    let htables = hyper_tables(&loc, &scale, pack.hmin, pack.hmax)?;
    let hyper = encode_with(&pack.h, &htables, |i| i % n)?;
    let (mu, sigma) = hyper_params(model, pack)?;
    let ztables = main_tables(&mu, &sigma, pack.zmin, pack.zmax)?;
    let main = encode_with(&pack.z, &ztables, |i| i)?;
    Ok(Bitstream {
        digest: cfg.digest(),
        height: cfg.input_h as u16,
        width: cfg.input_w as u16,
        zmin: i16_bound(pack.zmin)?,
        zmax: i16_bound(pack.zmax)?,
        hmin: i16_bound(pack.hmin)?,
        hmax: i16_bound(pack.hmax)?,
        hyper,
        main,
    })
}

/// Hyper segment first, then the main segment under the decoded hyper-prior.
pub fn deserialize<T: Scalar>(model: &Model<T>, stream: &Bitstream) -> Result<LatentPack> {
    let cfg = model.config();
    if stream.digest != cfg.digest() {
        return Err(CodecError::Header("bitstream was produced by a different model configuration".into()));
    }
    if (usize::from(stream.height), usize::from(stream.width)) != (cfg.input_h, cfg.input_w) {
        return Err(CodecError::Header(format!("image size {}x{} does not match the model", stream.width, stream.height)));
    }
    let (lh, lw) = cfg.latent_hw();
    let (hh, hw) = cfg.hyper_hw();
    let latent_shape = [lh, lw, cfg.channels_m];
    let hyper_shape = [hh, hw, cfg.channels_n];
    let (hmin, hmax) = (i32::from(stream.hmin), i32::from(stream.hmax));
    let (zmin, zmax) = (i32::from(stream.zmin), i32::from(stream.zmax));
    let (loc, scale) = prior_params(model);
    let n = loc.len();
    let htables = hyper_tables(&loc, &scale, hmin, hmax)?;
    let h = decode_with(&stream.hyper, &htables, hyper_shape.iter().product(), |i| i % n)?;
    let partial = LatentPack {
        latent_shape,
        z: vec![0; latent_shape.iter().product()],
        hyper_shape,
        h,
        zmin,
        zmax,
        hmin,
        hmax,
    };
    let (mu, sigma) = hyper_params(model, &partial)?;
    let ztables = main_tables(&mu, &sigma, zmin, zmax)?;
    let z = decode_with(&stream.main, &ztables, partial.z.len(), |i| i)?;
    Ok(LatentPack { z, ..partial })
}

pub fn compress<T: Scalar>(model: &Model<T>, image: &Image) -> Result<Bitstream> {
    serialize(model, &analyze(model, image)?)
}

fn latent_tensor<T: Scalar>(pack: &LatentPack) -> Result<Tensor<T>> {
    let [a, b, c] = pack.latent_shape;
    Ok(Tensor::new(&[1, a, b, c], pack.z.iter().map(|&v| T::from_f64(f64::from(v))).collect())?)
}

/// Class probabilities from the quantized latent alone.
pub fn classify<T: Scalar>(model: &Model<T>, pack: &LatentPack) -> Result<Vec<f64>> {
    let tape = Tape::inference();
    let logits = model.classify_latent(&tape, tape.constant(latent_tensor::<T>(pack)?))?;
    let probs = ecat_runtime::softmax_rows(&tape.value(logits));
    Ok(probs.data().iter().map(|p| p.as_f64()).collect())
}

/// Clamped 8-bit reconstruction from the quantized latent.
pub fn reconstruct<T: Scalar>(model: &Model<T>, pack: &LatentPack, keep: Keep) -> Result<Image> {
    let tape = Tape::inference();
    let (_, recon) = model.decode_latent(&tape, tape.constant(latent_tensor::<T>(pack)?), keep)?;
    let cfg = model.config();
    Image::from_unit(cfg.input_w, cfg.input_h, tape.value(recon).data())
}

/// Indices of the `k` most probable classes, highest first; ties by index.
pub fn top_k(probs: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx.into_iter().take(k).map(|i| (i, probs[i])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::entropy::likelihood::{bits, gaussian_bin_likelihood, logistic_bin_likelihood};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng) -> Image {
        Image::new(64, 64, (0..64 * 64 * 3).map(|_| rng.random()).collect()).unwrap()
    }

    fn random_pack(rng: &mut ChaCha8Rng, spread: i32) -> LatentPack {
        let z = (0..4 * 4 * 48).map(|_| rng.random_range(-spread..=spread)).collect();
        let h = (0..32).map(|_| rng.random_range(-3..=3)).collect();
        LatentPack::new([4, 4, 48], z, [1, 1, 32], h).unwrap()
    }

    #[test]
    fn serialization_round_trips() {
        let model = Model::new(ModelConfig::desk(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for spread in [0, 1, 5, 40] {
            let pack = random_pack(&mut rng, spread);
            let s = serialize(&model, &pack).unwrap();
            let bytes = s.to_bytes();
            let back = deserialize(&model, &Bitstream::from_bytes(&bytes).unwrap()).unwrap();
            assert_eq!(back, pack);
        }
        let pack = analyze(&model, &random_image(&mut rng)).unwrap();
        let s = serialize(&model, &pack).unwrap();
        assert_eq!(deserialize(&model, &s).unwrap(), pack);
    }

    #[test]
    fn foreign_streams_are_rejected() {
        let model = Model::new(ModelConfig::desk(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = serialize(&model, &random_pack(&mut rng, 3)).unwrap();
        let mut other = ModelConfig::desk();
        other.num_classes = 7;
        let other = Model::new(other, 1).unwrap();
        assert!(matches!(deserialize(&other, &s), Err(CodecError::Header(_))));
        let mut cut = s.clone();
        cut.main.truncate(cut.main.len() - 2);
        assert!(deserialize(&model, &cut).is_err());
    }

    #[test]
    fn rate_matches_naive_loop() {
        let model = Model::new(ModelConfig::desk(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pack = random_pack(&mut rng, 6);
        let est = rate_estimate(&model, &pack).unwrap();
        let (mu, sigma) = hyper_params(&model, &pack).unwrap();
        let (loc, scale) = prior_params(&model);
        let mut naive = 0.0;
        for i in 0..pack.z.len() {
            naive += bits(gaussian_bin_likelihood(f64::from(pack.z[i]), mu[i], sigma[i]));
        }
        for i in 0..pack.h.len() {
            naive += bits(logistic_bin_likelihood(f64::from(pack.h[i]), loc[i % 32], scale[i % 32]));
        }
        assert!(((est - naive) / naive).abs() < 1e-6);
        assert!(est >= 0.0);
    }

    #[test]
    fn classification_and_reconstruction_are_deterministic() {
        let model = Model::new(ModelConfig::desk(), 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pack = analyze(&model, &random_image(&mut rng)).unwrap();
        let p = classify(&model, &pack).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert_eq!(p, classify(&model, &pack).unwrap());
        let a = reconstruct(&model, &pack, Keep::ALL).unwrap();
        assert_eq!(a, reconstruct(&model, &pack, Keep::ALL).unwrap());
        assert_eq!((a.width, a.height), (64, 64));
    }

    #[test]
    fn top_k_orders_by_probability() {
        assert_eq!(top_k(&[0.1, 0.5, 0.1, 0.3], 3), vec![(1, 0.5), (3, 0.3), (0, 0.1)]);
    }
}
