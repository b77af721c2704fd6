//! Two-step training: pretraining without quantization, then the full
//! objective from the pretrained weights.

use std::time::Instant;

use ecat_runtime::Tape;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Stage, TrainConfig};
use crate::error::{CodecError, Result};
use crate::harness::dataset::{augment, Dataset};
use crate::image::Image;
use crate::model::Model;
use crate::training::checkpoint::Checkpoint;
use crate::training::loss::{joint_loss, LossParts, LossWeights};
use crate::training::optim::{Adam, CosineSchedule};

/// Crop padding of the desk augmentation.
pub const CROP_PAD: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Means over the epoch's batches.
    pub loss: LossParts,
    pub seconds: f64,
}

/// Independent stream for `(purpose, epoch, batch)` under one master seed.
pub fn stream(seed: u64, purpose: u64, epoch: usize, batch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 48) ^ ((epoch as u64) << 24) ^ batch as u64);
    rng
}

const SHUFFLE: u64 = 1;
const AUGMENT: u64 = 2;
const NOISE: u64 = 3;

/// Runs `tc.epochs` epochs of Adam(W) on the objective given by `weights`.
pub fn train(
    model: &mut Model,
    data: &Dataset,
    tc: &TrainConfig,
    weights: LossWeights,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    tc.validate()?;
    if data.is_empty() {
        return Err(CodecError::Dataset("empty training set".into()));
    }
    let cfg = model.config().clone();
    data.check_size(cfg.input_w, cfg.input_h)?;
    if data.num_classes > cfg.num_classes {
        return Err(CodecError::Dataset(format!(
            "dataset has {} classes, model {}",
            data.num_classes, cfg.num_classes
        )));
    }
    let per_epoch = data.len().div_ceil(tc.batch_size);
    let schedule = CosineSchedule {
        base: tc.base_lr,
        warmup_steps: tc.warmup_epochs * per_epoch,
        total_steps: tc.epochs * per_epoch,
    };
    let mut opt = Adam::new(&model.store, model.trainable(), tc.weight_decay);
    let mut history = Vec::with_capacity(tc.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0;
    for epoch in 0..tc.epochs {
        let started = Instant::now();
        order.sort_unstable();
        order.shuffle(&mut stream(tc.seed, SHUFFLE, epoch, 0));
        let mut acc = LossParts::default();
        let mut lr = 0.0;
        for (b, idx) in order.chunks(tc.batch_size).enumerate() {
            let mut aug_rng = stream(tc.seed, AUGMENT, epoch, b);
            let owned: Vec<Image> = idx
                .iter()
                .map(|&i| {
                    if tc.augment {
                        augment(&data.images[i], CROP_PAD, &mut aug_rng)
                    } else {
                        data.images[i].clone()
                    }
                })
                .collect();
            let refs: Vec<&Image> = owned.iter().collect();
            let x = Image::batch::<f32>(&refs)?;
            let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
            let tape = Tape::new();
            let out = joint_loss(&tape, model, &x, &labels, weights, &mut stream(tc.seed, NOISE, epoch, b))
                .map_err(|e| CodecError::Diverged(format!("epoch {epoch} batch {b}: {e}")))?;
            if !out.parts.total.is_finite() {
                return Err(CodecError::Diverged(format!("epoch {epoch} batch {b}: {:?}", out.parts)));
            }
            model.store.zero_grad();
            tape.backward_into(out.total, &mut model.store)?;
            lr = schedule.lr(step);
            opt.step(&mut model.store, lr);
            step += 1;
            acc.total += out.parts.total;
            acc.ce += out.parts.ce;
            acc.sse += out.parts.sse;
            acc.rate_bpp += out.parts.rate_bpp;
            acc.rate_bits += out.parts.rate_bits;
        }
        let n = per_epoch as f64;
        let log = EpochLog {
            epoch,
            lr,
            loss: LossParts {
                total: acc.total / n,
                ce: acc.ce / n,
                sse: acc.sse / n,
                rate_bpp: acc.rate_bpp / n,
                rate_bits: acc.rate_bits / n,
            },
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&log);
        history.push(log);
    }
    Ok(history)
}

/// Step 1: normalization statistics from `data`, then alpha 1, beta 0.001,
/// no quantization and no rate.
pub fn pretrain_stage1(
    model: &mut Model,
    data: &Dataset,
    tc: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<(Checkpoint, Vec<EpochLog>)> {
    let (mean, std) = data.channel_stats();
    model.set_normalization(mean, std)?;
    let history = train(model, data, tc, LossWeights::PRETRAIN, on_epoch)?;
    Ok((Checkpoint::capture(model, Stage::Pretrain, tc.epochs as u32), history))
}

/// Step 2: the full objective, starting from a stage-1 checkpoint.
pub fn train_stage2(
    model: &mut Model,
    start: &Checkpoint,
    data: &Dataset,
    tc: &TrainConfig,
    alpha: f64,
    beta: f64,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<(Checkpoint, Vec<EpochLog>)> {
    if alpha < 0.0 || beta < 0.0 {
        return Err(CodecError::Config("alpha and beta must be non-negative".into()));
    }
    start.restore(model)?;
    let history = train(model, data, tc, LossWeights::full(alpha, beta), on_epoch)?;
    Ok((Checkpoint::capture(model, Stage::Full, tc.epochs as u32), history))
}
