//! Hyper-prior entropy model, rate computation and lossless coding.

pub mod bitstream;
pub mod hyper;
pub mod likelihood;
pub mod pack;
pub mod range_coder;
pub mod tables;

pub use bitstream::Bitstream;
pub use hyper::HyperPrior;
pub use likelihood::{
    gaussian_bin_likelihood, gaussian_rate, logistic_bin_likelihood, logistic_rate, LIKELIHOOD_FLOOR, SCALE_MIN,
};
pub use pack::LatentPack;
pub use range_coder::{range_decode, range_encode, RangeDecoder, RangeEncoder};
pub use tables::CdfTable;

/// Tables for one pack: per-channel hyper tables and per-element main tables.
#[derive(Debug, Clone)]
pub struct EntropyTables {
    pub hyper: Vec<CdfTable>,
    pub main: Vec<CdfTable>,
}

/// Per-channel logistic tables over `[min, max]`.
pub fn hyper_tables(loc: &[f64], scale: &[f64], min: i32, max: i32) -> crate::error::Result<Vec<CdfTable>> {
    loc.iter().zip(scale).map(|(&l, &s)| CdfTable::logistic(l, s, min, max)).collect()
}

/// Per-element Gaussian tables over `[min, max]`.
pub fn main_tables(mu: &[f64], sigma: &[f64], min: i32, max: i32) -> crate::error::Result<Vec<CdfTable>> {
    mu.iter().zip(sigma).map(|(&m, &s)| CdfTable::gaussian(m, s, min, max)).collect()
}

/// Bits of a pack given the decoded hyper parameters, in 64-bit.
pub fn pack_bits(pack: &LatentPack, mu: &[f64], sigma: &[f64], loc: &[f64], scale: &[f64]) -> f64 {
    let n = loc.len();
    let main: f64 = pack
        .z
        .iter()
        .zip(mu.iter().zip(sigma))
        .map(|(&v, (&m, &s))| likelihood::bits(gaussian_bin_likelihood(f64::from(v), m, s)))
        .sum();
    let hyper: f64 = pack
        .h
        .iter()
        .enumerate()
        .map(|(i, &v)| likelihood::bits(logistic_bin_likelihood(f64::from(v), loc[i % n], scale[i % n])))
        .sum();
    main + hyper
}
