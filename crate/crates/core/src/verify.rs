//! Finite-difference verification suites shared by `selftest` and the tests.

use ecat_runtime::{gradient_check, relative_error, sample_indices, GradCheckConfig, ParamStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::entropy::{gaussian_rate, logistic_rate};
use crate::harness::synth;
use crate::image::Image;
use crate::model::Model;
use crate::training::loss::{joint_loss, LossWeights};
use crate::transformer::TransformerHead;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub tol: f64,
    pub passed: bool,
    /// Probes discarded because they straddled a kink.
    pub skipped: usize,
}

fn random(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).expect("shape")
}

/// Values bounded away from zero, for inputs that feed a kink.
fn off_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    random(shape, 1.0, rng).map(|v| if v >= 0.0 { v + 0.05 } else { v - 0.05 })
}

fn check<F>(name: &str, f: F, inputs: Vec<Tensor<f64>>, tol: f64) -> CheckResult
where
    F: Fn(&Tape<f64>, &[Var]) -> Var,
{
    let cfg = GradCheckConfig { tol, ..Default::default() };
    let r = gradient_check(&f, &inputs, &cfg);
    CheckResult { name: name.into(), max_rel_err: r.max_rel_err, tol, passed: r.passed, skipped: 0 }
}

/// Every differentiable operation at 64-bit against central differences.
pub fn layer_suite(seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let mut out = Vec::new();
    out.push(check(
        "conv2d",
        |t, v| t.conv2d(v[0], v[1], v[2], 2, 2).unwrap(),
        vec![random(&[1, 8, 8, 2], 1.0, r), random(&[5, 5, 2, 3], 0.5, r), random(&[3], 0.5, r)],
        1e-6,
    ));
    out.push(check(
        "deconv2d",
        |t, v| t.deconv2d(v[0], v[1], v[2], 2, 2, 1).unwrap(),
        vec![random(&[1, 4, 4, 3], 1.0, r), random(&[5, 5, 2, 3], 0.5, r), random(&[2], 0.5, r)],
        1e-6,
    ));
    out.push(check(
        "conv2d_3x3_stride1",
        |t, v| t.conv2d(v[0], v[1], v[2], 1, 1).unwrap(),
        vec![random(&[2, 5, 5, 2], 1.0, r), random(&[3, 3, 2, 2], 0.5, r), random(&[2], 0.5, r)],
        1e-5,
    ));
    out.push(check("leaky_relu", |t, v| t.leaky_relu(v[0], 0.01), vec![off_zero(&[4, 6], r)], 1e-5));
    out.push(check(
        "layer_norm",
        |t, v| t.layer_norm(v[0], v[1], v[2], 1e-6).unwrap(),
        vec![random(&[3, 5], 2.0, r), random(&[5], 1.5, r), random(&[5], 1.0, r)],
        1e-5,
    ));
    out.push(check(
        "linear",
        |t, v| t.linear(v[0], v[1], Some(v[2])).unwrap(),
        vec![random(&[2, 3, 4], 1.0, r), random(&[4, 5], 1.0, r), random(&[5], 1.0, r)],
        1e-5,
    ));
    out.push(check(
        "multi_head_self_attention",
        |t, v| {
            let (q, k, val) = (t.linear(v[0], v[1], None).unwrap(), t.linear(v[0], v[2], None).unwrap(), t.linear(v[0], v[3], None).unwrap());
            let a = t.attention(q, k, val, 2).unwrap();
            t.linear(a, v[4], None).unwrap()
        },
        vec![
            random(&[1, 3, 4], 1.0, r),
            random(&[4, 4], 1.0, r),
            random(&[4, 4], 1.0, r),
            random(&[4, 4], 1.0, r),
            random(&[4, 4], 1.0, r),
        ],
        1e-5,
    ));
    out.push(check(
        "feed_forward",
        |t, v| {
            let h = t.gelu(t.linear(v[0], v[1], Some(v[2])).unwrap());
            t.linear(h, v[3], Some(v[4])).unwrap()
        },
        vec![
            random(&[1, 3, 4], 1.0, r),
            random(&[4, 16], 1.0, r),
            random(&[16], 0.5, r),
            random(&[16, 4], 1.0, r),
            random(&[4], 0.5, r),
        ],
        1e-5,
    ));
    out.push(check("softmax", |t, v| t.softmax(v[0]), vec![random(&[3, 5], 2.0, r)], 1e-5));
    out.push(check(
        "cross_entropy",
        |t, v| t.cross_entropy(v[0], &[1, 4, 0]).unwrap(),
        vec![random(&[3, 5], 2.0, r)],
        1e-5,
    ));
    out.push(check("gelu", |t, v| t.gelu(v[0]), vec![random(&[10], 3.0, r)], 1e-5));
    out.push(check("softplus", |t, v| t.softplus(v[0]), vec![random(&[10], 4.0, r)], 1e-5));
    out.push(check(
        "gaussian_rate",
        |t, v| {
            let sigma = t.add_scalar(t.softplus(v[2]), 1e-6);
            gaussian_rate(t, v[0], v[1], sigma).unwrap()
        },
        vec![random(&[2, 2, 3], 3.0, r), random(&[2, 2, 3], 2.0, r), random(&[2, 2, 3], 1.0, r)],
        1e-5,
    ));
    out.push(check(
        "logistic_rate",
        |t, v| {
            let s = t.add_scalar(t.softplus(v[2]), 1e-6);
            logistic_rate(t, v[0], v[1], s).unwrap()
        },
        vec![random(&[2, 2, 3], 3.0, r), random(&[3], 1.0, r), random(&[3], 1.0, r)],
        1e-5,
    ));
    out.push(check(
        "layout_ops",
        |t, v| {
            let p = t.pad_spatial(v[0], (1, 0, 0, 1));
            let c = t.crop_spatial(p, (0, 1, 1, 0));
            let a = t.channel_affine(c, &[2.0, -0.5], &[0.1, 0.3]);
            let cat = t.concat(&[a, v[0]], 3);
            let s = t.slice(cat, 3, 1, 2);
            let rows = t.reshape(s, &[1, 9, 2]);
            let b = t.add_trailing(rows, t.reshape(v[1], &[2]));
            let rep = t.repeat_leading(v[1], 1);
            t.concat(&[b, rep], 1)
        },
        vec![random(&[1, 3, 3, 2], 1.0, r), random(&[1, 2], 1.0, r)],
        1e-5,
    ));
    out.push(transformer_blocks_check(seed));
    out
}

/// Two Transformer blocks end to end, tolerance 1e-4.
fn transformer_blocks_check(seed: u64) -> CheckResult {
    let cfg = ModelConfig {
        input_h: 32,
        input_w: 32,
        channels_n: 4,
        channels_m: 6,
        embed_c: 8,
        depth_l: 3,
        heads: 2,
        num_classes: 3,
        ffn_ratio: 2.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7f);
    let mut store = ParamStore::<f64>::new();
    let mut head = TransformerHead::new(&mut store, &cfg, &mut rng);
    head.blocks.truncate(2);
    for id in store.ids().collect::<Vec<_>>() {
        let v = store.value(id).map(|w| w * 10.0);
        store.set_value(id, v).expect("same shape");
    }
    let z = random(&[1, 2, 2, 6], 1.0, &mut rng);
    check(
        "transformer_two_blocks",
        |t, v| {
            let (seq, _) = head.embed(t, &store, v[0]).unwrap();
            let out = head.forward(t, &store, seq).unwrap();
            let logits = head.logits(t, &store, out.class_token).unwrap();
            let i = t.sum(t.mul(out.intermediates[1], out.intermediates[0]));
            t.add(t.sum(logits), i)
        },
        vec![z],
        1e-4,
    )
}

/// Parameter-gradient check of the complete objective (all three terms) on
/// a two-image batch at 64-bit. `coords` coordinates per tensor are probed.
pub fn full_model_check(cfg: &ModelConfig, seed: u64, coords: usize, tol: f64) -> crate::error::Result<CheckResult> {
    let mut m32 = Model::new(cfg.clone(), seed)?;
    let data = synth::generate(2, cfg.input_h, seed);
    if cfg.input_h != cfg.input_w {
        return Err(crate::error::CodecError::Config("full-model check expects square inputs".into()));
    }
    let (mean, std) = data.channel_stats();
    m32.set_normalization(mean, std)?;
    let mut model: Model<f64> = m32.cast();
    let refs: Vec<&Image> = data.images.iter().collect();
    let x = Image::batch::<f64>(&refs)?;
    let labels: Vec<usize> = data.labels.iter().map(|&l| l % cfg.num_classes).collect();
    let weights = LossWeights::full(0.3, 0.003);
    let loss_at = |model: &Model<f64>, tape: &Tape<f64>| {
        joint_loss(tape, model, &x, &labels, weights, &mut ChaCha8Rng::seed_from_u64(seed ^ 0xabc))
    };
    let tape = Tape::new();
    let out = loss_at(&model, &tape)?;
    model.store.zero_grad();
    tape.backward_into(out.total, &mut model.store)?;
    drop(tape);

    let h = 1e-5;
    let floor = 1e-6;
    let base = {
        let t = Tape::inference_with_kinks();
        loss_at(&model, &t)?;
        t.kink_log()
    };
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    let mut pick = ChaCha8Rng::seed_from_u64(seed ^ 0x5a);
    for id in model.trainable() {
        let n = model.store.value(id).len();
        let offset = pick.random_range(0..n);
        let mut accepted = 0;
        // Probes that move any pre-activation across a kink are replaced.
        for j in sample_indices(n, Some(4 * coords)) {
            if accepted == coords {
                break;
            }
            let j = (j + offset) % n;
            let analytic = model.store.get(id).grad.data()[j];
            let x0 = model.store.value(id).data()[j];
            let mut eval = |x: f64| -> crate::error::Result<(f64, bool)> {
                model.store.value_mut(id).data_mut()[j] = x;
                let t = Tape::inference_with_kinks();
                let l = loss_at(&model, &t)?.parts.total;
                Ok((l, t.kink_log() == base))
            };
            let (plus, same_p) = eval(x0 + h)?;
            let (minus, same_m) = eval(x0 - h)?;
            model.store.value_mut(id).data_mut()[j] = x0;
            if !(same_p && same_m) {
                skipped += 1;
                continue;
            }
            accepted += 1;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(relative_error(analytic, numeric, floor));
        }
        if accepted == 0 {
            return Err(crate::error::CodecError::Config(format!(
                "every probe of {} crossed a kink",
                model.store.get(id).name
            )));
        }
    }
    Ok(CheckResult { name: "full_objective".into(), max_rel_err: worst, tol, passed: worst <= tol, skipped })
}
