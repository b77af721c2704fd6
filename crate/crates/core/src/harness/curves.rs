//! CSV emission of the rate-distortion and rate-accuracy curves.

use std::path::{Path, PathBuf};

use crate::error::{CodecError, Result};
use crate::harness::evaluate::MetricRecord;

pub const HEADER: &str = "bpp,psnr,top1,alpha,beta,seed";

/// Rows sorted by bpp (ties by alpha, beta, seed) with fixed precision, so
/// identical records always produce identical bytes.
pub fn render(records: &[MetricRecord]) -> String {
    let mut rows: Vec<&MetricRecord> = records.iter().collect();
    rows.sort_by(|a, b| {
        a.bpp
            .total_cmp(&b.bpp)
            .then(a.alpha.total_cmp(&b.alpha))
            .then(a.beta.total_cmp(&b.beta))
            .then(a.seed.cmp(&b.seed))
    });
    let mut out = String::from(HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{:.6},{:.4},{:.6},{:.6},{:.6},{}\n",
            r.bpp, r.psnr, r.top1, r.alpha, r.beta, r.seed
        ));
    }
    out
}

/// Writes `rate_distortion.csv` and `rate_accuracy.csv` into `dir`. Both
/// carry the full column set; they differ only in name, which tells a
/// plotter which metric to put on the y axis.
pub fn emit_curves(dir: &Path, records: &[MetricRecord]) -> Result<[PathBuf; 2]> {
    if records.is_empty() {
        return Err(CodecError::Config("no records to emit".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| CodecError::io(dir, e))?;
    let text = render(records);
    let paths = [dir.join("rate_distortion.csv"), dir.join("rate_accuracy.csv")];
    for p in &paths {
        std::fs::write(p, &text).map_err(|e| CodecError::io(p, e))?;
    }
    Ok(paths)
}

/// Parses a file produced by [`emit_curves`]; the checkpoint id is not stored.
pub fn parse(text: &str) -> Result<Vec<MetricRecord>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| CodecError::Config(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>().join(",") != HEADER {
        return Err(CodecError::Config(format!("unexpected curve header {header:?}")));
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| CodecError::Config(e.to_string()))?;
        let f = |i: usize| -> Result<f64> {
            row[i].parse().map_err(|_| CodecError::Config(format!("bad number {:?}", &row[i])))
        };
        out.push(MetricRecord {
            bpp: f(0)?,
            psnr: f(1)?,
            top1: f(2)?,
            alpha: f(3)?,
            beta: f(4)?,
            seed: row[5].parse().map_err(|_| CodecError::Config(format!("bad seed {:?}", &row[5])))?,
            checkpoint: String::new(),
        });
    }
    Ok(out)
}
