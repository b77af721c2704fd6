//! Acceptance run: one line per criterion, `PASS` or `FAIL`, at the stated
//! tolerances. Criteria that miss their target are reported, not hidden; the
//! process exits non-zero only on a harness error, or on any failure when
//! `ECAT_ACCEPTANCE_STRICT=1`.
//!
//! `cargo test --release --test acceptance -- C1 C3` runs a subset.

use std::collections::BTreeMap;
use std::time::Instant;

use ecat_core::codec::{analyze, classify, compress, rate_estimate, serialize, top_k};
use ecat_core::entropy::range_coder::{range_decode, range_encode};
use ecat_core::entropy::CdfTable;
use ecat_core::harness::commands::{self, selftest, snapshot, Options, Settings};
use ecat_core::harness::dataset::Dataset;
use ecat_core::harness::evaluate::{ablate, ablation_ladder, continuous_metrics, evaluate, MetricRecord, RunTag};
use ecat_core::harness::{ppm, synth};
use ecat_core::training::{pretrain_stage1, train_stage2, Checkpoint};
use ecat_core::{verify, Keep, Model, ModelConfig, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

type Criterion = fn(&mut Shared) -> Outcome;

/// Models trained once and reused by several criteria.
#[derive(Default)]
struct Shared {
    pipeline: Option<Pipeline>,
    sweeps: Option<Vec<SeedSweep>>,
}

struct Pipeline {
    model: Model,
    val: Dataset,
    record: MetricRecord,
}

// ---------------------------------------------------------------- C1

fn c1_coder(_: &mut Shared) -> Outcome {
    const SYMBOLS: usize = 1_000_000;
    const SEEDS: u64 = 100;
    let mut bytes_total = 0usize;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lo = rng.random_range(-64..=0);
        let hi = rng.random_range(1..=64);
        let table = CdfTable::gaussian(rng.random_range(-4.0..4.0), rng.random_range(0.05..12.0), lo, hi).unwrap();
        let cum: Vec<u32> = {
            let f = table.frequencies();
            f.iter().scan(0u32, |acc, &x| {
                *acc += x;
                Some(*acc)
            })
            .collect()
        };
        // Symbols follow the table, with both alphabet ends forced in at
        // random positions and at the stream edges.
        let mut symbols: Vec<i32> = (0..SYMBOLS)
            .map(|_| {
                let t = rng.random_range(0..*cum.last().unwrap());
                lo + cum.partition_point(|&c| c <= t) as i32
            })
            .collect();
        for _ in 0..1000 {
            let i = rng.random_range(0..SYMBOLS);
            symbols[i] = if rng.random_bool(0.5) { lo } else { hi };
        }
        symbols[0] = lo;
        symbols[SYMBOLS - 1] = hi;
        let encoded = match range_encode(&symbols, &table) {
            Ok(b) => b,
            Err(e) => return outcome(false, format!("seed {seed}: encode failed: {e}")),
        };
        match range_decode(&encoded, &table, SYMBOLS) {
            Ok(d) if d == symbols => {}
            Ok(_) => return outcome(false, format!("seed {seed}: decoded symbols differ")),
            Err(e) => return outcome(false, format!("seed {seed}: decode failed: {e}")),
        }
        bytes_total += encoded.len();
    }
    outcome(true, format!("{SEEDS} seeds x {SYMBOLS} symbols exact, {bytes_total} bytes total"))
}

// ---------------------------------------------------------------- C2

fn c2_rate(shared: &mut Shared) -> Outcome {
    let p = pipeline(shared);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..50 {
        let img = &p.val.images[rng.random_range(0..p.val.len())];
        let pack = analyze(&p.model, img).unwrap();
        let estimate = rate_estimate(&p.model, &pack).unwrap();
        let actual = serialize(&p.model, &pack).unwrap().payload_bits() as f64;
        let bound = 0.01 * estimate + 256.0;
        let gap = (actual - estimate).abs();
        worst = worst.max(gap / bound);
        if gap > bound {
            failures += 1;
        }
    }
    outcome(failures == 0, format!("50 packs, worst |actual-estimate| at {:.1}% of bound, {failures} over", 100.0 * worst))
}

// ---------------------------------------------------------------- C3

fn c3_gradients(_: &mut Shared) -> Outcome {
    let layers = verify::layer_suite(3);
    let worst = layers.iter().map(|r| r.max_rel_err / r.tol).fold(0.0, f64::max);
    let bad: Vec<&str> = layers.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    let full = verify::full_model_check(&ModelConfig::desk(), 0, 5, 1e-3).unwrap();
    outcome(
        bad.is_empty() && full.passed,
        format!(
            "{} layer checks (worst {:.1e} of tol, failing {:?}); desk objective max rel err {:.2e} <= 1e-3: {} ({} kink probes replaced)",
            layers.len(),
            worst,
            bad,
            full.max_rel_err,
            full.passed,
            full.skipped
        ),
    )
}

// ---------------------------------------------------------------- C4

fn c4_overfit(_: &mut Shared) -> Outcome {
    let data = synth::generate(8, 64, synth::TRAIN_SEED);
    let mut model = Model::new(ModelConfig::desk(), 0).unwrap();
    // One batch of 8 per epoch, so epochs == steps.
    let tc = TrainConfig {
        epochs: 200,
        batch_size: 8,
        base_lr: 4e-3,
        warmup_epochs: 10,
        weight_decay: 0.0,
        augment: false,
        ..TrainConfig::desk_stage1()
    };
    pretrain_stage1(&mut model, &data, &tc, &mut |_| {}).unwrap();
    let (ce, psnr) = continuous_metrics(&model, &data).unwrap();
    outcome(ce < 0.05 && psnr > 30.0, format!("after 200 steps CE {ce:.4} (< 0.05), PSNR {psnr:.2} dB (> 30)"))
}

// ---------------------------------------------------------------- C5

const C5_TRAIN: usize = 2000;
const C5_VAL: usize = 500;
const C5_STAGE1_EPOCHS: usize = 50;
const C5_STAGE2_EPOCHS: usize = 30;

fn stage_configs(seed: u64, e1: usize, e2: usize) -> (TrainConfig, TrainConfig) {
    (
        TrainConfig { epochs: e1, seed, ..TrainConfig::desk_stage1() },
        TrainConfig { epochs: e2, warmup_epochs: 1, seed, ..TrainConfig::desk_stage2() },
    )
}

fn pipeline(shared: &mut Shared) -> &Pipeline {
    shared.pipeline.get_or_insert_with(|| {
        let train = synth::generate(C5_TRAIN, 64, synth::TRAIN_SEED);
        let val = synth::generate(C5_VAL, 64, synth::VAL_SEED);
        let (tc1, tc2) = stage_configs(0, C5_STAGE1_EPOCHS, C5_STAGE2_EPOCHS);
        let mut model = Model::new(ModelConfig::desk(), 0).unwrap();
        let (ck1, _) = pretrain_stage1(&mut model, &train, &tc1, &mut |_| {}).unwrap();
        train_stage2(&mut model, &ck1, &train, &tc2, 0.3, 0.003, &mut |_| {}).unwrap();
        let tag = RunTag { alpha: 0.3, beta: 0.003, seed: 0, checkpoint: "c5".into() };
        let record = evaluate(&model, &val, Keep::ALL, &tag).unwrap().record;
        Pipeline { model, val, record }
    })
}

fn c5_pipeline(shared: &mut Shared) -> Outcome {
    let r = &pipeline(shared).record;
    outcome(
        r.top1 >= 0.5 && r.psnr >= 24.0,
        format!("val top-1 {:.3} (>= 0.50), PSNR {:.2} dB (>= 24), {:.4} bpp", r.top1, r.psnr, r.bpp),
    )
}

// ---------------------------------------------------------------- C6-C8

const SWEEP_TRAIN: usize = 1000;
const SWEEP_VAL: usize = 300;
const SWEEP_STAGE1_EPOCHS: usize = 30;
const SWEEP_STAGE2_EPOCHS: usize = 12;
const SWEEP_SEEDS: [u64; 3] = [1, 2, 3];

/// `(alpha, beta)` stage-2 runs per seed. The rate sweep holds the ratio at
/// 100; the ratio sweep holds beta at 0.003 so the three ratios land at
/// comparable bit rates.
const RATE_SWEEP: [(f64, f64); 3] = [(0.1, 0.001), (0.3, 0.003), (0.6, 0.006)];
const RATIO_SWEEP: [(f64, f64); 3] = [(0.15, 0.003), (0.3, 0.003), (0.6, 0.003)];

struct SeedSweep {
    runs: BTreeMap<String, MetricRecord>,
    ladder: Vec<f64>,
}

fn key(alpha: f64, beta: f64) -> String {
    format!("{alpha}/{beta}")
}

fn sweeps(shared: &mut Shared) -> &Vec<SeedSweep> {
    shared.sweeps.get_or_insert_with(|| {
        SWEEP_SEEDS
            .iter()
            .map(|&seed| {
                let train = synth::generate(SWEEP_TRAIN, 64, synth::TRAIN_SEED ^ seed);
                let val = synth::generate(SWEEP_VAL, 64, synth::VAL_SEED ^ seed);
                let (tc1, tc2) = stage_configs(seed, SWEEP_STAGE1_EPOCHS, SWEEP_STAGE2_EPOCHS);
                let mut model = Model::new(ModelConfig::desk(), seed).unwrap();
                let (ck1, _) = pretrain_stage1(&mut model, &train, &tc1, &mut |_| {}).unwrap();
                let mut runs = BTreeMap::new();
                let mut ladder = Vec::new();
                for &(alpha, beta) in RATE_SWEEP.iter().chain(&RATIO_SWEEP) {
                    if runs.contains_key(&key(alpha, beta)) {
                        continue;
                    }
                    let mut m = Model::new(ModelConfig::desk(), seed).unwrap();
                    train_stage2(&mut m, &ck1, &train, &tc2, alpha, beta, &mut |_| {}).unwrap();
                    let tag = RunTag { alpha, beta, seed, checkpoint: key(alpha, beta) };
                    let rec = evaluate(&m, &val, Keep::ALL, &tag).unwrap().record;
                    eprintln!(
                        "  seed {seed} alpha {alpha} beta {beta}: bpp {:.4} psnr {:.2} top1 {:.3}",
                        rec.bpp, rec.psnr, rec.top1
                    );
                    if (alpha, beta) == (0.3, 0.003) {
                        ladder = ablate(&m, &val, &ablation_ladder()).unwrap().into_iter().map(|(_, p)| p).collect();
                    }
                    runs.insert(key(alpha, beta), rec);
                }
                SeedSweep { runs, ladder }
            })
            .collect()
    })
}

fn means(sw: &[SeedSweep], points: &[(f64, f64)]) -> Vec<(f64, f64, f64)> {
    points
        .iter()
        .map(|&(a, b)| {
            let recs: Vec<&MetricRecord> = sw.iter().map(|s| &s.runs[&key(a, b)]).collect();
            let n = recs.len() as f64;
            (
                recs.iter().map(|r| r.bpp).sum::<f64>() / n,
                recs.iter().map(|r| r.psnr).sum::<f64>() / n,
                recs.iter().map(|r| r.top1).sum::<f64>() / n,
            )
        })
        .collect()
}

fn fmt_points(m: &[(f64, f64, f64)]) -> String {
    m.iter().map(|(b, p, t)| format!("({b:.4} bpp, {p:.2} dB, {t:.3})")).collect::<Vec<_>>().join(" ")
}

fn c6_ratio(shared: &mut Shared) -> Outcome {
    let m = means(sweeps(shared), &RATIO_SWEEP);
    let reference = m[1].0;
    let matched = m.iter().all(|p| (p.0 - reference).abs() <= 0.1 * reference);
    let acc = m.windows(2).all(|w| w[1].2 >= w[0].2);
    let psnr = m.windows(2).all(|w| w[1].1 <= w[0].1);
    outcome(
        matched && acc && psnr,
        format!(
            "ratio 50/100/200: {}; bpp matched +-10%: {matched}, top-1 non-decreasing: {acc}, PSNR non-increasing: {psnr}",
            fmt_points(&m)
        ),
    )
}

fn c7_rate_sweep(shared: &mut Shared) -> Outcome {
    let m = means(sweeps(shared), &RATE_SWEEP);
    let bpp = m.windows(2).all(|w| w[1].0 > w[0].0);
    let psnr = m.windows(2).all(|w| w[1].1 >= w[0].1);
    let acc = m.windows(2).all(|w| w[1].2 >= w[0].2);
    outcome(
        bpp && psnr && acc,
        format!(
            "alpha 0.1/0.3/0.6: {}; bpp increasing: {bpp}, PSNR non-decreasing: {psnr}, top-1 non-decreasing: {acc}",
            fmt_points(&m)
        ),
    )
}

fn c8_ablation(shared: &mut Shared) -> Outcome {
    let sw = sweeps(shared);
    let rungs = sw[0].ladder.len();
    let mean: Vec<f64> = (0..rungs).map(|i| sw.iter().map(|s| s.ladder[i]).sum::<f64>() / sw.len() as f64).collect();
    let monotone = mean.windows(2).all(|w| w[1] <= w[0]);
    let labels: Vec<String> = ablation_ladder().iter().map(Keep::label).collect();
    let shown: Vec<String> = labels.iter().zip(&mean).map(|(l, p)| format!("{l} {p:.3}")).collect();
    outcome(monotone, format!("mean PSNR over 3 seeds: {} ; non-increasing: {monotone}", shown.join(", ")))
}

// ---------------------------------------------------------------- C9

fn c9_markov(shared: &mut Shared) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline(shared);
    let ck = dir.path().join("model.ckpt");
    Checkpoint::capture(&p.model, ecat_core::Stage::Full, 0).save(&ck).unwrap();
    let settings = Settings { out: dir.path().to_path_buf(), ..Options::default().resolve().unwrap() };
    let mut identical = 0;
    let mut untouched = true;
    let n = 20;
    for (i, img) in p.val.images.iter().take(n).enumerate() {
        let src = dir.path().join(format!("{i}.ppm"));
        ppm::write_ppm(&src, img).unwrap();
        let stream = dir.path().join(format!("{i}.ecat"));
        std::fs::write(&stream, compress(&p.model, &ppm::read_ppm(&src).unwrap()).unwrap().to_bytes()).unwrap();
        let before = ppm::read_counters();
        let from_disk = commands::classify_file(&settings, &ck, &stream, 5, &mut std::io::sink()).unwrap();
        untouched &= ppm::read_counters() == before;
        let in_memory = top_k(&classify(&p.model, &analyze(&p.model, img).unwrap()).unwrap(), 5);
        identical += usize::from(from_disk == in_memory);
    }
    outcome(
        untouched && identical == n,
        format!("classify path read no image bytes: {untouched}; disk == in-memory top-5 on {identical}/{n} images"),
    )
}

// ---------------------------------------------------------------- C10

fn c10_determinism(_: &mut Shared) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let s = Options { out: Some(out.clone()), seed: Some(7), ..Default::default() }.resolve().unwrap();
        let checks = selftest(&s, &mut std::io::sink()).unwrap();
        (checks.iter().all(|c| c.passed), snapshot(&out).unwrap())
    };
    let (ok_a, a) = run("a");
    let (ok_b, b) = run("b");
    let kinds = |ext: &str| a.keys().filter(|p| p.extension().is_some_and(|e| e == ext)).count();
    let covered = kinds("ckpt") >= 2 && kinds("ecat") >= 1 && kinds("csv") >= 3;
    let same = a == b;
    outcome(
        ok_a && ok_b && covered && same,
        format!(
            "{} files ({} ckpt, {} ecat, {} csv) byte-identical across runs: {same}; selftest passed: {}",
            a.len(),
            kinds("ckpt"),
            kinds("ecat"),
            kinds("csv"),
            ok_a && ok_b
        ),
    )
}

fn main() {
    let criteria: [(&str, &str, Criterion); 10] = [
        ("C1", "coder round trip", c1_coder),
        ("C2", "rate conformance", c2_rate),
        ("C3", "gradient correctness", c3_gradients),
        ("C4", "overfit smoke test", c4_overfit),
        ("C5", "two-step pipeline", c5_pipeline),
        ("C6", "ratio trade-off direction", c6_ratio),
        ("C7", "rate sweep direction", c7_rate_sweep),
        ("C8", "ablation direction", c8_ablation),
        ("C9", "structural Markov property", c9_markov),
        ("C10", "determinism", c10_determinism),
    ];
    let wanted: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut shared = Shared::default();
    let mut failed = Vec::new();
    for (id, name, run) in criteria {
        if !wanted.is_empty() && !wanted.iter().any(|w| w == id) {
            continue;
        }
        let started = Instant::now();
        let o = run(&mut shared);
        let verdict = if o.passed { "PASS" } else { "FAIL" };
        println!("{verdict} {id} {name}: {} [{:.0}s]", o.detail, started.elapsed().as_secs_f64());
        if !o.passed {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failing {failed:?} (analysis in README)");
        if std::env::var("ECAT_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
