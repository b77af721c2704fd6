use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ecat_core::harness::commands::{self as cmd, Options, Settings};

#[derive(Parser)]
#[command(name = "ecat", version, about = "Learned image codec with compressed-domain classification")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// key=value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Architecture profile: desk or paper
    #[arg(long, global = true, value_parser = ["desk", "paper"])]
    profile: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cross-entropy weight
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Distortion weight (default alpha/100)
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DataArgs {
    /// Directory holding PPM images
    #[arg(long)]
    data: PathBuf,
    /// CSV of path,label rows (default <data>/manifest.csv)
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain without quantization or rate
    TrainStage1 {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Joint rate-distortion-accuracy training from a stage-1 checkpoint
    TrainStage2 {
        #[arg(long)]
        from: PathBuf,
        #[command(flatten)]
        data: DataArgs,
    },
    /// image.ppm to image.ecat
    Compress {
        #[arg(long)]
        checkpoint: PathBuf,
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// image.ecat to image.ppm, with PSNR against an optional reference
    Decompress {
        #[arg(long)]
        checkpoint: PathBuf,
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Top-5 classes from a bitstream alone
    Classify {
        #[arg(long)]
        checkpoint: PathBuf,
        input: PathBuf,
    },
    /// bpp, PSNR and top-1 over a dataset; writes record.csv
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
    },
    /// PSNR with tapped block features removed one by one
    Ablate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
    },
    /// rate_distortion.csv and rate_accuracy.csv from record files
    Curves {
        #[arg(required = true)]
        records: Vec<PathBuf>,
    },
    /// Coder round trip, gradient checks and a small deterministic pipeline
    Selftest,
    /// Write a synthetic labelled split
    Synth {
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long, default_value_t = 2000)]
        count: usize,
    },
}

fn run(cli: Cli, log: &mut dyn Write) -> ecat_core::Result<bool> {
    let g = cli.global;
    let s: Settings = Options { config: g.config, profile: g.profile, seed: g.seed, alpha: g.alpha, beta: g.beta, out: g.out }
        .resolve()?;
    let data = |d: &DataArgs| cmd::load_dataset(&s, &d.data, d.manifest.as_deref());
    match cli.command {
        Command::TrainStage1 { data: d } => {
            cmd::train_stage1_on(&s, &data(&d)?, log)?;
        }
        Command::TrainStage2 { from, data: d } => {
            cmd::train_stage2_on(&s, &from, &data(&d)?, log)?;
        }
        Command::Compress { checkpoint, input, output } => {
            cmd::compress_file(&s, &checkpoint, &input, output.as_deref(), log)?;
        }
        Command::Decompress { checkpoint, input, output, reference } => {
            cmd::decompress_file(&s, &checkpoint, &input, output.as_deref(), reference.as_deref(), log)?;
        }
        Command::Classify { checkpoint, input } => {
            cmd::classify_file(&s, &checkpoint, &input, 5, log)?;
        }
        Command::Evaluate { checkpoint, data: d } => {
            cmd::evaluate_on(&s, &checkpoint, &data(&d)?, log)?;
        }
        Command::Ablate { checkpoint, data: d } => {
            cmd::ablate_on(&s, &checkpoint, &data(&d)?, log)?;
        }
        Command::Curves { records } => {
            cmd::curves_from(&s, &records, log)?;
        }
        Command::Selftest => {
            let checks = cmd::selftest(&s, log)?;
            return Ok(checks.iter().all(|c| c.passed));
        }
        Command::Synth { split, count } => {
            cmd::synth_to(&s, &split, count, log)?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    // Usage errors are contract violations (1); clap would exit with 2,
    // which is reserved for I/O failures.
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let mut out = std::io::stdout().lock();
    match run(cli, &mut out) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("ecat: selftest failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("ecat: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}

