//! 16-bit quantized cumulative frequency tables.

use crate::entropy::likelihood::{gaussian_bin_likelihood, logistic_bin_likelihood};
use crate::error::{CodecError, Result};

pub const PRECISION_BITS: u32 = 16;
pub const TOTAL: u32 = 1 << PRECISION_BITS;

/// Cumulative counts over the alphabet `[min, min + n)`; `cum[0] = 0` and
/// `cum[n] = TOTAL`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CdfTable {
    pub min: i32,
    pub cum: Vec<u32>,
}

impl CdfTable {
    /// Quantizes a (not necessarily normalized) probability vector. Every
    /// symbol keeps frequency at least one.
    pub fn from_probs(min: i32, probs: &[f64]) -> Result<Self> {
        let freqs = quantize_frequencies(probs)?;
        let mut cum = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0u32;
        cum.push(0);
        for f in freqs {
            acc += f;
            cum.push(acc);
        }
        debug_assert_eq!(acc, TOTAL);
        Ok(Self { min, cum })
    }

    pub fn gaussian(mu: f64, sigma: f64, min: i32, max: i32) -> Result<Self> {
        let probs = alphabet(min, max)?
            .map(|v| gaussian_bin_likelihood(f64::from(v), mu, sigma))
            .collect::<Vec<_>>();
        Self::from_probs(min, &probs)
    }

    pub fn logistic(loc: f64, scale: f64, min: i32, max: i32) -> Result<Self> {
        let probs = alphabet(min, max)?
            .map(|v| logistic_bin_likelihood(f64::from(v), loc, scale))
            .collect::<Vec<_>>();
        Self::from_probs(min, &probs)
    }

    pub fn len(&self) -> usize {
        self.cum.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn max(&self) -> i32 {
        self.min + self.len() as i32 - 1
    }

    /// `(start, freq)` of a symbol.
    pub fn interval(&self, symbol: i32) -> Result<(u32, u32)> {
        let idx = symbol - self.min;
        if idx < 0 || idx as usize >= self.len() {
            return Err(CodecError::OutOfAlphabet { symbol, min: self.min, max: self.max() });
        }
        let i = idx as usize;
        Ok((self.cum[i], self.cum[i + 1] - self.cum[i]))
    }

    /// Symbol whose interval contains `target < TOTAL`, with its interval.
    pub fn lookup(&self, target: u32) -> (i32, u32, u32) {
        // First index whose cumulative count exceeds the target, minus one.
        let i = self.cum.partition_point(|&c| c <= target) - 1;
        (self.min + i as i32, self.cum[i], self.cum[i + 1] - self.cum[i])
    }

    pub fn frequencies(&self) -> Vec<u32> {
        self.cum.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

fn alphabet(min: i32, max: i32) -> Result<std::ops::RangeInclusive<i32>> {
    if max < min {
        return Err(CodecError::EmptyAlphabet);
    }
    Ok(min..=max)
}

/// `max(1, round(p * TOTAL))` after normalization, with the total repaired by
/// adjusting the currently largest frequencies (lowest index wins ties).
pub fn quantize_frequencies(probs: &[f64]) -> Result<Vec<u32>> {
    let n = probs.len();
    if n == 0 {
        return Err(CodecError::EmptyAlphabet);
    }
    if n > TOTAL as usize {
        return Err(CodecError::Corrupt(format!("alphabet of {n} symbols exceeds 16-bit precision")));
    }
    let sum: f64 = probs.iter().sum();
    if !(sum.is_finite() && sum > 0.0) || probs.iter().any(|p| !(*p >= 0.0)) {
        return Err(CodecError::Corrupt("probabilities must be finite and non-negative".into()));
    }
    let mut freqs: Vec<u32> = probs
        .iter()
        .map(|p| ((p / sum * f64::from(TOTAL)).round() as u32).max(1))
        .collect();
    let mut total: i64 = freqs.iter().map(|&f| i64::from(f)).sum();
    let target = i64::from(TOTAL);
    while total != target {
        let (imax, &fmax) = freqs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .expect("non-empty");
        if total < target {
            freqs[imax] += (target - total) as u32;
            total = target;
        } else {
            let take = (total - target).min(i64::from(fmax) - 1);
            // Spread large corrections so the biggest bins shrink together.
            let take = take.min((i64::from(fmax) / 2).max(1));
            freqs[imax] -= take as u32;
            total -= take;
        }
    }
    Ok(freqs)
}

/// `KL(p || q)` in bits, where `q` is the quantized table of `p`.
pub fn quantization_kl(probs: &[f64], table: &CdfTable) -> f64 {
    let sum: f64 = probs.iter().sum();
    table
        .frequencies()
        .iter()
        .zip(probs)
        .filter(|(_, &p)| p > 0.0)
        .map(|(&f, &p)| {
            let p = p / sum;
            p * (p / (f64::from(f) / f64::from(TOTAL))).log2()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fair_coin() {
        let t = CdfTable::from_probs(0, &[0.5, 0.5]).unwrap();
        assert_eq!(t.cum, vec![0, 32768, 65536]);
    }

    #[test]
    fn rare_symbol_keeps_unit_frequency() {
        let t = CdfTable::from_probs(-1, &[1e-12, 1.0, 1e-7]).unwrap();
        assert_eq!(t.frequencies(), vec![1, 65534, 1]);
    }

    #[test]
    fn empty_alphabet_is_an_error() {
        assert!(matches!(CdfTable::gaussian(0.0, 1.0, 3, 2), Err(CodecError::EmptyAlphabet)));
        assert!(CdfTable::from_probs(0, &[]).is_err());
    }

    #[test]
    fn lookup_inverts_interval() {
        let t = CdfTable::gaussian(0.3, 1.7, -6, 6).unwrap();
        for s in -6..=6 {
            let (start, freq) = t.interval(s).unwrap();
            assert_eq!(t.lookup(start), (s, start, freq));
            assert_eq!(t.lookup(start + freq - 1).0, s);
        }
        assert!(t.interval(7).is_err());
    }

    #[test]
    fn gaussian_tables_are_close_to_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let mu = rng.random_range(-3.0..3.0);
            let sigma = rng.random_range(0.2..4.0);
            let probs: Vec<f64> = (-16..=16).map(|v| gaussian_bin_likelihood(f64::from(v), mu, sigma)).collect();
            let t = CdfTable::from_probs(-16, &probs).unwrap();
            let kl = quantization_kl(&probs, &t);
            assert!(kl < 1e-3, "KL {kl} at mu={mu} sigma={sigma}");
        }
    }

    proptest::proptest! {
        #[test]
        fn tables_are_well_formed(probs in proptest::collection::vec(0.0f64..1.0, 1..400), bump in 0usize..400) {
            let mut probs = probs;
            let i = bump % probs.len();
            probs[i] += 1e-3;
            let t = CdfTable::from_probs(0, &probs).unwrap();
            proptest::prop_assert_eq!(t.cum[0], 0);
            proptest::prop_assert_eq!(*t.cum.last().unwrap(), TOTAL);
            for w in t.cum.windows(2) {
                proptest::prop_assert!(w[1] > w[0]);
            }
        }
    }
}
