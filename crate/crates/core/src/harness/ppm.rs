//! Binary P6 PPM with maxval 255.
//!
//! Every read goes through [`read_ppm`], which bumps a process-wide counter;
//! tests use it to prove a code path never touches image files.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{CodecError, Result};
use crate::image::Image;

static PPM_READS: AtomicU64 = AtomicU64::new(0);
static PPM_BYTES: AtomicU64 = AtomicU64::new(0);

/// `(files, bytes)` read through this module since process start.
pub fn read_counters() -> (u64, u64) {
    (PPM_READS.load(Ordering::SeqCst), PPM_BYTES.load(Ordering::SeqCst))
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| CodecError::io(path, e))?;
    PPM_READS.fetch_add(1, Ordering::SeqCst);
    PPM_BYTES.fetch_add(bytes.len() as u64, Ordering::SeqCst);
    decode_ppm(&bytes).map_err(|e| match e {
        CodecError::Ppm(m) => CodecError::Ppm(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let mut token = || -> Result<&[u8]> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(CodecError::Ppm("truncated header".into()));
        }
        Ok(&bytes[start..pos])
    };
    if token()? != b"P6" {
        return Err(CodecError::Ppm("not a binary P6 file".into()));
    }
    let mut number = |what: &str| -> Result<usize> {
        let t = token()?;
        std::str::from_utf8(t)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CodecError::Ppm(format!("bad {what}")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval != 255 {
        return Err(CodecError::Ppm(format!("maxval {maxval} unsupported; only 255")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let header_end = pos + 1;
    let need = width * height * 3;
    if bytes.len() < header_end + need {
        return Err(CodecError::Ppm("truncated raster".into()));
    }
    if bytes.len() > header_end + need {
        return Err(CodecError::Ppm("trailing data after raster".into()));
    }
    Image::new(width, height, bytes[header_end..].to_vec()).map_err(|e| CodecError::Ppm(e.to_string()))
}

pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.data);
    out
}

pub fn write_ppm(path: &Path, image: &Image) -> Result<()> {
    std::fs::write(path, encode_ppm(image)).map_err(|e| CodecError::io(path, e))
}
