//! Bin likelihoods of the two priors and the differentiable rate terms.
//!
//! Probabilities are evaluated in 64-bit regardless of the tape precision;
//! both the coder tables and the training loss go through these functions.

use std::f64::consts::{LN_2, SQRT_2};

use ecat_runtime::{Result, RuntimeError, Scalar, Tape, Tensor, Var};

/// Lower clamp on any bin probability.
pub const LIKELIHOOD_FLOOR: f64 = 1e-9;
/// Floor added to every predicted or learned scale.
pub const SCALE_MIN: f64 = 1e-6;

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Unclamped mass of `N(mu, sigma)` on `[v - 1/2, v + 1/2]`.
pub fn gaussian_bin_mass(v: f64, mu: f64, sigma: f64) -> f64 {
    // Both tails are evaluated on the side away from the mean so the
    // difference never cancels catastrophically.
    let d = (v - mu).abs();
    let k = sigma * SQRT_2;
    0.5 * (libm::erfc((d - 0.5) / k) - libm::erfc((d + 0.5) / k))
}

/// [`gaussian_bin_mass`] clamped at the floor.
pub fn gaussian_bin_likelihood(v: f64, mu: f64, sigma: f64) -> f64 {
    gaussian_bin_mass(v, mu, sigma).max(LIKELIHOOD_FLOOR)
}

/// Likelihood with partial derivatives `(p, dp/dv, dp/dmu, dp/dsigma)`.
/// Derivatives vanish where the clamp is active.
pub fn gaussian_bin_grad(v: f64, mu: f64, sigma: f64) -> (f64, f64, f64, f64) {
    let raw = gaussian_bin_mass(v, mu, sigma);
    if raw <= LIKELIHOOD_FLOOR {
        return (LIKELIHOOD_FLOOR, 0.0, 0.0, 0.0);
    }
    let a = (v - mu + 0.5) / sigma;
    let b = (v - mu - 0.5) / sigma;
    let (fa, fb) = (std_normal_pdf(a), std_normal_pdf(b));
    let dv = (fa - fb) / sigma;
    let ds = -(a * fa - b * fb) / sigma;
    (raw, dv, -dv, ds)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn logistic_pdf(t: f64) -> f64 {
    let s = sigmoid(t);
    s * (1.0 - s)
}

/// Unclamped mass of the logistic distribution `(loc, s)` on `[k - 1/2, k + 1/2]`.
pub fn logistic_bin_mass(k: f64, loc: f64, s: f64) -> f64 {
    let d = (k - loc).abs();
    sigmoid((0.5 - d) / s) - sigmoid((-0.5 - d) / s)
}

/// [`logistic_bin_mass`] clamped at the floor.
pub fn logistic_bin_likelihood(k: f64, loc: f64, s: f64) -> f64 {
    logistic_bin_mass(k, loc, s).max(LIKELIHOOD_FLOOR)
}

/// `(p, dp/dk, dp/dloc, dp/ds)`, zero derivatives under the clamp.
pub fn logistic_bin_grad(k: f64, loc: f64, s: f64) -> (f64, f64, f64, f64) {
    let raw = logistic_bin_mass(k, loc, s);
    if raw <= LIKELIHOOD_FLOOR {
        return (LIKELIHOOD_FLOOR, 0.0, 0.0, 0.0);
    }
    let a = (k - loc + 0.5) / s;
    let b = (k - loc - 0.5) / s;
    let (fa, fb) = (logistic_pdf(a), logistic_pdf(b));
    let dk = (fa - fb) / s;
    let ds = -(a * fa - b * fb) / s;
    (raw, dk, -dk, ds)
}

pub fn bits(p: f64) -> f64 {
    -p.log2()
}


/// Total Gaussian code length in bits of `v` under `N(mu, sigma)`, summed
/// over every element. All three inputs share one shape.
pub fn gaussian_rate<T: Scalar>(tape: &Tape<T>, v: Var, mu: Var, sigma: Var) -> Result<Var> {
    let shape = tape.shape(v);
    if tape.shape(mu) != shape || tape.shape(sigma) != shape {
        return Err(RuntimeError::Shape {
            op: "gaussian_rate",
            detail: format!("v {shape:?}, mu {:?}, sigma {:?}", tape.shape(mu), tape.shape(sigma)),
        });
    }
    let (vv, mv, sv) = (tape.value(v), tape.value(mu), tape.value(sigma));
    let n = vv.len();
    let mut total = 0.0;
    let mut dv = Vec::with_capacity(n);
    let mut dm = Vec::with_capacity(n);
    let mut ds = Vec::with_capacity(n);
    let mut clamped = Vec::new();
    for i in 0..n {
        let (p, gv, gm, gs) = gaussian_bin_grad(vv.data()[i].as_f64(), mv.data()[i].as_f64(), sv.data()[i].as_f64());
        total += bits(p);
        clamped.push(p == LIKELIHOOD_FLOOR);
        let c = -1.0 / (p * LN_2);
        dv.push(c * gv);
        dm.push(c * gm);
        ds.push(c * gs);
    }
    if !total.is_finite() {
        return Err(RuntimeError::NonFinite("gaussian_rate"));
    }
    tape.log_kinks(|| clamped);
    let cached = [dv, dm, ds];
    Ok(tape.record(&[v, mu, sigma], Tensor::scalar(T::from_f64(total)), move |ctx| {
        let g = ctx.grad.data()[0].as_f64();
        cached
            .iter()
            .zip(&ctx.needs)
            .map(|(d, &need)| {
                need.then(|| {
                    let data = d.iter().map(|&x| T::from_f64(g * x)).collect();
                    Tensor::new(&shape, data).expect("input shape")
                })
            })
            .collect()
    }))
}

/// Total logistic code length in bits of `v: [..., C]` under per-channel
/// `loc: [C]` and positive `scale: [C]`.
pub fn logistic_rate<T: Scalar>(tape: &Tape<T>, v: Var, loc: Var, scale: Var) -> Result<Var> {
    let shape = tape.shape(v);
    let c = *shape.last().unwrap_or(&0);
    if tape.shape(loc) != [c] || tape.shape(scale) != [c] {
        return Err(RuntimeError::Shape {
            op: "logistic_rate",
            detail: format!("v {shape:?}, loc {:?}, scale {:?}", tape.shape(loc), tape.shape(scale)),
        });
    }
    let (vv, lv, sv) = (tape.value(v), tape.value(loc), tape.value(scale));
    let n = vv.len();
    let mut total = 0.0;
    let mut dv = Vec::with_capacity(n);
    let mut dl = vec![0.0; c];
    let mut ds = vec![0.0; c];
    let mut clamped = Vec::new();
    for i in 0..n {
        let ch = i % c;
        let (p, gk, gl, gs) = logistic_bin_grad(vv.data()[i].as_f64(), lv.data()[ch].as_f64(), sv.data()[ch].as_f64());
        total += bits(p);
        clamped.push(p == LIKELIHOOD_FLOOR);
        let k = -1.0 / (p * LN_2);
        dv.push(k * gk);
        dl[ch] += k * gl;
        ds[ch] += k * gs;
    }
    if !total.is_finite() {
        return Err(RuntimeError::NonFinite("logistic_rate"));
    }
    tape.log_kinks(|| clamped);
    Ok(tape.record(&[v, loc, scale], Tensor::scalar(T::from_f64(total)), move |ctx| {
        let g = ctx.grad.data()[0].as_f64();
        let build = |d: &[f64], s: &[usize]| {
            Tensor::new(s, d.iter().map(|&x| T::from_f64(g * x)).collect()).expect("input shape")
        };
        vec![
            ctx.needs[0].then(|| build(&dv, &shape)),
            ctx.needs[1].then(|| build(&dl, &[c])),
            ctx.needs[2].then(|| build(&ds, &[c])),
        ]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ecat_runtime::{gradient_check, GradCheckConfig};

    /// Composite Simpson integration of the normal density.
    fn integrate_normal(lo: f64, hi: f64, mu: f64, sigma: f64) -> f64 {
        let n = 20_000;
        let h = (hi - lo) / n as f64;
        let f = |x: f64| std_normal_pdf((x - mu) / sigma) / sigma;
        let mut acc = f(lo) + f(hi);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(lo + i as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn standard_bin_matches_integration() {
        let p = gaussian_bin_likelihood(0.0, 0.0, 1.0);
        let oracle = integrate_normal(-0.5, 0.5, 0.0, 1.0);
        assert!((p - oracle).abs() < 1e-12, "{p} vs {oracle}");
        assert!((p - 0.382925).abs() < 1e-6);
        assert!((bits(p) - 1.3849).abs() < 1e-4);
        for &(v, mu, s) in &[(3.0, 1.2, 0.7), (-2.0, 0.4, 2.5), (0.0, -4.0, 1.5)] {
            let o = integrate_normal(v - 0.5, v + 0.5, mu, s);
            assert!((gaussian_bin_likelihood(v, mu, s) - o).abs() < 1e-12);
        }
    }

    #[test]
    fn narrow_gaussian_is_point_mass() {
        let p = gaussian_bin_likelihood(2.0, 2.0, 1e-6);
        assert!((p - 1.0).abs() < 1e-12);
        assert!(bits(p) < 1e-9);
    }

    #[test]
    fn far_tail_clamps() {
        let p = gaussian_bin_likelihood(100.0, 0.0, 1.0);
        assert_eq!(p, LIKELIHOOD_FLOOR);
        assert!((bits(p) - 29.897).abs() < 1e-3);
    }

    #[test]
    fn widening_sigma_lowers_center_mass() {
        let mut prev = gaussian_bin_likelihood(0.3, 0.3, 0.05);
        for i in 1..200 {
            let p = gaussian_bin_likelihood(0.3, 0.3, 0.05 + 0.05 * i as f64);
            assert!(p < prev);
            prev = p;
        }
    }

    #[test]
    fn logistic_closed_form() {
        let p = logistic_bin_likelihood(0.0, 0.0, 1.0);
        let oracle = 2.0 / (1.0 + (-0.5f64).exp()) - 1.0;
        assert!((p - oracle).abs() < 1e-15);
        assert!((p - 0.244919).abs() < 1e-6);
    }

    #[test]
    fn logistic_symmetry_and_normalization() {
        for &(k, loc, s) in &[(3.0, 0.7, 1.3), (-5.0, 2.2, 0.4), (0.0, -1.5, 3.0)] {
            let a = logistic_bin_likelihood(k, loc, s);
            let b = logistic_bin_likelihood(-k, -loc, s);
            assert!((a - b).abs() < 1e-15);
        }
        for &(loc, s) in &[(0.0, 1.0), (0.3, 2.5), (-7.1, 0.2)] {
            // The floor is a coding safeguard, not probability mass.
            let total: f64 = (-1000..=1000).map(|k| logistic_bin_mass(k as f64, loc, s)).sum();
            assert!((total - 1.0).abs() < 1e-6, "sum {total}");
        }
    }

    fn check(f: &dyn Fn(&Tape<f64>, &[Var]) -> Var, inputs: Vec<Tensor<f64>>) {
        let cfg = GradCheckConfig { tol: 1e-5, ..Default::default() };
        let report = gradient_check(f, &inputs, &cfg);
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn gaussian_rate_gradients() {
        let v = Tensor::from_f64(&[6], &[0.3, -1.2, 2.7, 0.0, 4.1, -0.4]).unwrap();
        let mu = Tensor::from_f64(&[6], &[0.1, -0.5, 2.0, 0.8, 1.0, -0.4]).unwrap();
        let s = Tensor::from_f64(&[6], &[0.6, 1.1, 0.3, 2.0, 1.7, 0.9]).unwrap();
        check(&|t, x| gaussian_rate(t, x[0], x[1], x[2]).unwrap(), vec![v, mu, s]);
    }

    #[test]
    fn logistic_rate_gradients() {
        let v = Tensor::from_f64(&[2, 3], &[0.3, -1.2, 2.7, 0.0, 4.1, -0.4]).unwrap();
        let loc = Tensor::from_f64(&[3], &[0.1, -0.5, 2.0]).unwrap();
        let s = Tensor::from_f64(&[3], &[0.6, 1.1, 0.3]).unwrap();
        check(&|t, x| logistic_rate(t, x[0], x[1], x[2]).unwrap(), vec![v, loc, s]);
    }

    #[test]
    fn rate_sums_bits() {
        let tape = Tape::<f64>::new();
        let v = tape.leaf(Tensor::from_f64(&[2], &[0.0, 0.0]).unwrap());
        let mu = tape.leaf(Tensor::from_f64(&[2], &[0.0, 0.0]).unwrap());
        let s = tape.leaf(Tensor::from_f64(&[2], &[1.0, 1e-6]).unwrap());
        let r = gaussian_rate(&tape, v, mu, s).unwrap();
        let expect = bits(gaussian_bin_likelihood(0.0, 0.0, 1.0));
        assert!((tape.value(r).item() - expect).abs() < 1e-12);
    }
}
