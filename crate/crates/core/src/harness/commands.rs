//! The operations behind each `ecat` subcommand. The binary only parses
//! arguments; everything that touches files lives here so it can be tested.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::codec::{analyze, classify, compress, deserialize, reconstruct, top_k};
use crate::config::{ConfigFile, ModelConfig, TrainConfig};
use crate::entropy::range_coder::{range_decode, range_encode};
use crate::entropy::{Bitstream, CdfTable};
use crate::error::{CodecError, Result};
use crate::harness::curves::emit_curves;
use crate::harness::dataset::{ingest, write_dataset, Dataset};
use crate::harness::evaluate::{ablate, ablation_ladder, evaluate, MetricRecord, RunTag};
use crate::harness::{metrics, ppm, synth};
use crate::model::Model;
use crate::reconstructor::Keep;
use crate::training::{pretrain_stage1, train_stage2, Checkpoint, EpochLog};
use crate::verify;

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Options {
    pub config: Option<PathBuf>,
    pub profile: Option<String>,
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub out: Option<PathBuf>,
}

/// Options after the config file and defaults are folded in.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub model: ModelConfig,
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub out: PathBuf,
}

pub const DEFAULT_ALPHA: f64 = 0.3;
pub const DEFAULT_RATIO: f64 = 100.0;

fn number(file: &ConfigFile, key: &str) -> Result<Option<f64>> {
    file.get(key)
        .map(|v| v.parse().map_err(|_| CodecError::Config(format!("{key}: bad number {v:?}"))))
        .transpose()
}

impl Options {
    /// Flags win over the config file, which wins over the profile defaults.
    /// Keys prefixed `stage1.` or `stage2.` apply to one stage only.
    pub fn resolve(&self) -> Result<Settings> {
        let file = match &self.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        let profile = self.profile.clone().or_else(|| file.get("profile").map(str::to_string)).unwrap_or("desk".into());
        let mut model = ModelConfig::profile(&profile)?;
        let mut stage1 = TrainConfig { profile: profile.clone(), ..TrainConfig::desk_stage1() };
        let mut stage2 = TrainConfig { profile: profile.clone(), ..TrainConfig::desk_stage2() };
        let mut common = ConfigFile::default();
        let mut only: [ConfigFile; 2] = Default::default();
        for (k, v) in &file.entries {
            match k.split_once('.') {
                Some(("stage1", key)) => only[0].entries.insert(key.into(), v.clone()),
                Some(("stage2", key)) => only[1].entries.insert(key.into(), v.clone()),
                _ => common.entries.insert(k.clone(), v.clone()),
            };
        }
        let mut scratch = stage2.clone();
        common.apply(&mut model, &mut stage1)?;
        common.apply(&mut model, &mut scratch)?;
        stage2 = scratch;
        let mut m = model.clone();
        only[0].apply(&mut m, &mut stage1)?;
        only[1].apply(&mut m, &mut stage2)?;
        if m != model {
            return Err(CodecError::Config("model keys cannot be stage-specific".into()));
        }
        if let Some(seed) = self.seed {
            stage1.seed = seed;
            stage2.seed = seed;
        }
        model.validate()?;
        let alpha = match self.alpha {
            Some(a) => a,
            None => number(&file, "alpha")?.unwrap_or(DEFAULT_ALPHA),
        };
        let beta = match self.beta {
            Some(b) => b,
            None => number(&file, "beta")?.unwrap_or(alpha / DEFAULT_RATIO),
        };
        if !(alpha >= 0.0 && beta >= 0.0) {
            return Err(CodecError::Config("alpha and beta must be non-negative".into()));
        }
        Ok(Settings {
            model,
            seed: stage1.seed,
            stage1,
            stage2,
            alpha,
            beta,
            out: self.out.clone().unwrap_or_else(|| PathBuf::from(".")),
        })
    }
}

fn io<P: AsRef<Path>>(path: P) -> impl FnOnce(std::io::Error) -> CodecError {
    move |e| CodecError::io(path.as_ref(), e)
}

fn say(log: &mut dyn Write, line: String) -> Result<()> {
    writeln!(log, "{line}").map_err(io("<stdout>"))
}

/// A model restored from `checkpoint` under the configured architecture.
pub fn load_model(s: &Settings, checkpoint: &Path) -> Result<Model> {
    let ck = Checkpoint::load(checkpoint)?;
    let mut model = Model::new(s.model.clone(), s.seed)?;
    ck.restore(&mut model)?;
    Ok(model)
}

/// First 8 bytes of SHA-256 of a file, hex.
pub fn file_id(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(io(path))?;
    Ok(Sha256::digest(&bytes)[..8].iter().map(|b| format!("{b:02x}")).collect())
}

/// Dataset in `dir`, listed by `manifest` (default `dir/manifest.csv`).
pub fn load_dataset(s: &Settings, dir: &Path, manifest: Option<&Path>) -> Result<Dataset> {
    let default = dir.join("manifest.csv");
    let manifest = manifest.unwrap_or(&default);
    ingest(dir, manifest, s.model.num_classes, Some((s.model.input_w, s.model.input_h)))
}

fn write_log(path: &Path, history: &[EpochLog]) -> Result<()> {
    // Wall-clock time stays out of the file so reruns are byte-identical.
    let mut text = String::from("epoch,lr,total,ce,sse,rate_bpp,rate_bits\n");
    for h in history {
        let l = &h.loss;
        text.push_str(&format!(
            "{},{:.8e},{:.6},{:.6},{:.4},{:.6},{:.3}\n",
            h.epoch, h.lr, l.total, l.ce, l.sse, l.rate_bpp, l.rate_bits
        ));
    }
    std::fs::write(path, text).map_err(io(path))
}

fn epoch_printer(log: &mut dyn Write, stage: u8) -> impl FnMut(&EpochLog) + '_ {
    move |h| {
        let l = &h.loss;
        let _ = writeln!(
            log,
            "stage{stage} epoch {:>3} lr {:.2e} loss {:.4} ce {:.4} sse {:.2} bpp {:.4} ({:.1}s)",
            h.epoch, h.lr, l.total, l.ce, l.sse, l.rate_bpp, h.seconds
        );
    }
}

fn create_out(s: &Settings) -> Result<()> {
    std::fs::create_dir_all(&s.out).map_err(io(&s.out))
}

/// Stage 1 on a dataset; writes `stage1.ckpt` and `stage1_log.csv`.
pub fn train_stage1_on(s: &Settings, data: &Dataset, log: &mut dyn Write) -> Result<PathBuf> {
    create_out(s)?;
    let mut model = Model::new(s.model.clone(), s.seed)?;
    let (ck, history) = pretrain_stage1(&mut model, data, &s.stage1, &mut epoch_printer(log, 1))?;
    let path = s.out.join("stage1.ckpt");
    ck.save(&path)?;
    write_log(&s.out.join("stage1_log.csv"), &history)?;
    say(log, format!("wrote {}", path.display()))?;
    Ok(path)
}

/// Stage 2 from a stage-1 checkpoint; writes `stage2.ckpt` and `stage2_log.csv`.
pub fn train_stage2_on(s: &Settings, from: &Path, data: &Dataset, log: &mut dyn Write) -> Result<PathBuf> {
    create_out(s)?;
    let start = Checkpoint::load(from)?;
    let mut model = Model::new(s.model.clone(), s.seed)?;
    let (ck, history) =
        train_stage2(&mut model, &start, data, &s.stage2, s.alpha, s.beta, &mut epoch_printer(log, 2))?;
    let path = s.out.join("stage2.ckpt");
    ck.save(&path)?;
    write_log(&s.out.join("stage2_log.csv"), &history)?;
    say(log, format!("wrote {}", path.display()))?;
    Ok(path)
}

fn default_output(s: &Settings, explicit: Option<&Path>, input: &Path, ext: &str) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let name = input.file_stem().map(PathBuf::from).unwrap_or_else(|| "out".into());
            s.out.join(name).with_extension(ext)
        }
    }
}

/// `image.ppm` to `image.ecat`.
pub fn compress_file(s: &Settings, checkpoint: &Path, input: &Path, output: Option<&Path>, log: &mut dyn Write) -> Result<PathBuf> {
    let model = load_model(s, checkpoint)?;
    let image = ppm::read_ppm(input)?;
    let bytes = compress(&model, &image)?.to_bytes();
    let path = default_output(s, output, input, "ecat");
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io(dir))?;
    }
    std::fs::write(&path, &bytes).map_err(io(&path))?;
    say(log, format!("{} bytes, {:.4} bpp -> {}", bytes.len(), (bytes.len() * 8) as f64 / image.pixels() as f64, path.display()))?;
    Ok(path)
}

fn read_stream(path: &Path) -> Result<Bitstream> {
    Bitstream::from_bytes(&std::fs::read(path).map_err(io(path))?)
}

/// `.ecat` to `.ppm`; PSNR against `reference` when given.
pub fn decompress_file(
    s: &Settings,
    checkpoint: &Path,
    input: &Path,
    output: Option<&Path>,
    reference: Option<&Path>,
    log: &mut dyn Write,
) -> Result<PathBuf> {
    let model = load_model(s, checkpoint)?;
    let pack = deserialize(&model, &read_stream(input)?)?;
    let image = reconstruct(&model, &pack, Keep::ALL)?;
    let path = default_output(s, output, input, "ppm");
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io(dir))?;
    }
    ppm::write_ppm(&path, &image)?;
    say(log, format!("wrote {}", path.display()))?;
    if let Some(r) = reference {
        let original = ppm::read_ppm(r)?;
        if (original.width, original.height) != (image.width, image.height) {
            return Err(CodecError::Config("reference size differs from the decoded image".into()));
        }
        say(log, format!("psnr_db={:.4}", metrics::psnr(&original, &image)))?;
    }
    Ok(path)
}

/// Top-`k` classes from the bitstream alone. No image path is accepted.
pub fn classify_file(s: &Settings, checkpoint: &Path, input: &Path, k: usize, log: &mut dyn Write) -> Result<Vec<(usize, f64)>> {
    let model = load_model(s, checkpoint)?;
    let pack = deserialize(&model, &read_stream(input)?)?;
    let top = top_k(&classify(&model, &pack)?, k);
    for (rank, (class, p)) in top.iter().enumerate() {
        say(log, format!("{} class={} p={:.6}", rank + 1, class, p))?;
    }
    Ok(top)
}

const RECORD_HEADER: &str = "bpp,psnr,top1,alpha,beta,seed,checkpoint";

fn record_line(r: &MetricRecord) -> String {
    format!("{:.6},{:.4},{:.6},{:.6},{:.6},{},{}", r.bpp, r.psnr, r.top1, r.alpha, r.beta, r.seed, r.checkpoint)
}

/// Reads files written by [`evaluate_on`].
pub fn read_records(path: &Path) -> Result<Vec<MetricRecord>> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    let mut lines = text.lines();
    if lines.next() != Some(RECORD_HEADER) {
        return Err(CodecError::Config(format!("{}: not a record file", path.display())));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || CodecError::Config(format!("{}: bad record {l:?}", path.display()));
            if f.len() != 7 {
                return Err(bad());
            }
            let n = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
            Ok(MetricRecord {
                bpp: n(0)?,
                psnr: n(1)?,
                top1: n(2)?,
                alpha: n(3)?,
                beta: n(4)?,
                seed: f[5].parse().map_err(|_| bad())?,
                checkpoint: f[6].to_string(),
            })
        })
        .collect()
}

/// Scores a checkpoint; writes `record.csv` into the output directory.
pub fn evaluate_on(s: &Settings, checkpoint: &Path, data: &Dataset, log: &mut dyn Write) -> Result<MetricRecord> {
    create_out(s)?;
    let model = load_model(s, checkpoint)?;
    let tag = RunTag { alpha: s.alpha, beta: s.beta, seed: s.seed, checkpoint: file_id(checkpoint)? };
    let record = evaluate(&model, data, Keep::ALL, &tag)?.record;
    let path = s.out.join("record.csv");
    std::fs::write(&path, format!("{RECORD_HEADER}\n{}\n", record_line(&record))).map_err(io(&path))?;
    say(log, format!("bpp={:.4} psnr_db={:.3} top1={:.4} -> {}", record.bpp, record.psnr, record.top1, path.display()))?;
    Ok(record)
}

/// PSNR with z1..z3 progressively zeroed; writes `ablation.csv`.
pub fn ablate_on(s: &Settings, checkpoint: &Path, data: &Dataset, log: &mut dyn Write) -> Result<Vec<(Keep, f64)>> {
    create_out(s)?;
    let model = load_model(s, checkpoint)?;
    let rungs = ablate(&model, data, &ablation_ladder())?;
    let mut text = String::from("kept,psnr\n");
    say(log, format!("{:<10} {:>9}", "kept", "psnr_db"))?;
    for (keep, p) in &rungs {
        text.push_str(&format!("{},{:.4}\n", keep.label(), p));
        say(log, format!("{:<10} {:>9.3}", keep.label(), p))?;
    }
    let path = s.out.join("ablation.csv");
    std::fs::write(&path, text).map_err(io(&path))?;
    Ok(rungs)
}

/// Curve CSVs from one or more record files.
pub fn curves_from(s: &Settings, records: &[PathBuf], log: &mut dyn Write) -> Result<[PathBuf; 2]> {
    let mut all = Vec::new();
    for p in records {
        all.extend(read_records(p)?);
    }
    let paths = emit_curves(&s.out, &all)?;
    say(log, format!("{} records -> {}, {}", all.len(), paths[0].display(), paths[1].display()))?;
    Ok(paths)
}

/// Synthetic split `train` or `val` written as PPM plus manifest.
pub fn synth_to(s: &Settings, split: &str, count: usize, log: &mut dyn Write) -> Result<Dataset> {
    let base = match split {
        "train" => synth::TRAIN_SEED,
        "val" => synth::VAL_SEED,
        other => return Err(CodecError::Config(format!("unknown split {other:?}; use train or val"))),
    };
    if s.model.input_h != s.model.input_w {
        return Err(CodecError::Config("the synthetic generator makes square images".into()));
    }
    let data = synth::generate(count, s.model.input_h, base ^ s.seed);
    write_dataset(&s.out, &data)?;
    say(log, format!("{count} {split} images -> {}", s.out.display()))?;
    Ok(data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn coder_roundtrip(seed: u64) -> Result<SelfCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut symbols_total = 0;
    for _ in 0..8 {
        let lo = rng.random_range(-40..0);
        let hi = rng.random_range(1..40);
        let table = CdfTable::gaussian(rng.random_range(-3.0..3.0), rng.random_range(0.1..8.0), lo, hi)?;
        let n = 20_000;
        let mut symbols: Vec<i32> = (0..n).map(|_| rng.random_range(lo..=hi)).collect();
        symbols[0] = lo;
        symbols[n - 1] = hi;
        let bytes = range_encode(&symbols, &table)?;
        if range_decode(&bytes, &table, n)? != symbols {
            return Ok(SelfCheck { name: "range_coder".into(), passed: false, detail: "round trip mismatch".into() });
        }
        symbols_total += n;
    }
    Ok(SelfCheck { name: "range_coder".into(), passed: true, detail: format!("{symbols_total} symbols exact") })
}

/// Coder round trip, gradient-check suites, then a small deterministic
/// two-stage run on synthetic data. Artifacts land in the output directory.
pub fn selftest(s: &Settings, log: &mut dyn Write) -> Result<Vec<SelfCheck>> {
    create_out(s)?;
    let mut checks = vec![coder_roundtrip(s.seed)?];
    for r in verify::layer_suite(s.seed) {
        checks.push(SelfCheck {
            name: format!("gradcheck/{}", r.name),
            passed: r.passed,
            detail: format!("max rel err {:.2e} (tol {:.0e})", r.max_rel_err, r.tol),
        });
    }
    let small = ModelConfig {
        input_h: 32,
        input_w: 32,
        channels_n: 8,
        channels_m: 8,
        embed_c: 16,
        depth_l: 3,
        heads: 2,
        num_classes: 10,
        ffn_ratio: 2.0,
    };
    let r = verify::full_model_check(&small, s.seed, 2, 1e-3)?;
    checks.push(SelfCheck {
        name: "gradcheck/full_objective".into(),
        passed: r.passed,
        detail: format!("max rel err {:.2e} (tol {:.0e}, {} kink probes replaced)", r.max_rel_err, r.tol, r.skipped),
    });
    for c in &checks {
        say(log, format!("{} {} {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail))?;
    }

    // A short desk-sized pipeline. Checkpoints, bitstreams and CSVs written
    // here are byte-identical for a given seed.
    let mut run = Settings {
        model: ModelConfig { num_classes: 10, ..s.model.clone() },
        stage1: TrainConfig { epochs: 3, warmup_epochs: 1, batch_size: 16, ..s.stage1.clone() },
        stage2: TrainConfig { epochs: 3, warmup_epochs: 1, batch_size: 16, ..s.stage2.clone() },
        ..s.clone()
    };
    if run.model.input_h != run.model.input_w || run.model.input_h > 64 {
        run.model = ModelConfig::desk();
    }
    let size = run.model.input_h;
    let train = synth::generate(128, size, synth::TRAIN_SEED ^ s.seed);
    let val = synth::generate(16, size, synth::VAL_SEED ^ s.seed);
    let ck1 = train_stage1_on(&run, &train, log)?;
    let ck2 = train_stage2_on(&run, &ck1, &train, log)?;
    let model = load_model(&run, &ck2)?;
    let streams = run.out.join("bitstreams");
    std::fs::create_dir_all(&streams).map_err(io(&streams))?;
    // Decoding from disk must give back exactly the sender's latents.
    let mut exact = true;
    for (i, img) in val.images.iter().take(4).enumerate() {
        let bytes = compress(&model, img)?.to_bytes();
        let path = streams.join(format!("val_{i:02}.ecat"));
        std::fs::write(&path, &bytes).map_err(io(&path))?;
        let pack = deserialize(&model, &read_stream(&path)?)?;
        exact &= pack == analyze(&model, img)?;
    }
    let record = evaluate_on(&run, &ck2, &val, log)?;
    ablate_on(&run, &ck2, &val, log)?;
    curves_from(&run, &[run.out.join("record.csv")], log)?;
    let pipeline = SelfCheck {
        name: "pipeline".into(),
        passed: exact && record.bpp.is_finite() && record.psnr.is_finite(),
        detail: format!("bpp {:.4}, psnr {:.2} dB, top1 {:.3}", record.bpp, record.psnr, record.top1),
    };
    say(log, format!("{} {} {}", if pipeline.passed { "ok  " } else { "FAIL" }, pipeline.name, pipeline.detail))?;
    checks.push(pipeline);
    Ok(checks)
}

/// Every regular file under `dir`, relative path to contents, for
/// byte-level comparison of two runs.
pub fn snapshot(dir: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(io(&d))? {
            let p = entry.map_err(io(&d))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).expect("under dir").to_path_buf();
                out.insert(rel, std::fs::read(&p).map_err(io(&p))?);
            }
        }
    }
    Ok(out)
}
