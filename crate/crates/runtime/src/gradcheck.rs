//! Central finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand::rngs::StdRng;

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub step: f64,
    /// Pass threshold on the maximum relative error.
    pub tol: f64,
    /// Lower bound on the relative-error denominator.
    pub abs_floor: f64,
    /// Check at most this many coordinates per input (evenly strided).
    pub max_coords: Option<usize>,
    /// Skip coordinates whose value lies within this distance of a kink at 0.
    pub exclude_near_zero: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-5,
            abs_floor: 1e-8,
            max_coords: None,
            exclude_near_zero: 0.0,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputReport {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
    pub worst_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub inputs: Vec<InputReport>,
    pub max_rel_err: f64,
    pub passed: bool,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Indices to probe: all of them, or `limit` evenly strided ones.
pub fn sample_indices(len: usize, limit: Option<usize>) -> Vec<usize> {
    match limit {
        Some(m) if m < len => (0..m).map(|i| i * len / m).collect(),
        _ => (0..len).collect(),
    }
}

/// Compare the tape's gradient of `<r, f(inputs)>` against central differences,
/// where `r` is a fixed random projection (or 1 for scalar outputs).
pub fn gradient_check<F>(f: &F, inputs: &[Tensor<f64>], cfg: &GradCheckConfig) -> GradCheckReport
where
    F: Fn(&Tape<f64>, &[Var]) -> Var + ?Sized,
{
    let tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &leaves);
    let out_shape = tape.shape(out);
    let projection = if out_shape.iter().product::<usize>() == 1 {
        Tensor::full(&out_shape, 1.0)
    } else {
        let mut rng = StdRng::seed_from_u64(cfg.seed);
        let n = out_shape.iter().product();
        Tensor::new(&out_shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .expect("consistent shape")
    };
    let loss = {
        let r = tape.constant(projection.clone());
        tape.sum(tape.mul(out, r))
    };
    let grads = tape.backward(loss).expect("scalar loss");

    let eval = |perturbed: &[Tensor<f64>]| -> f64 {
        let t = Tape::inference();
        let vars: Vec<Var> = perturbed.iter().map(|x| t.constant(x.clone())).collect();
        let o = f(&t, &vars);
        t.value(o).dot(&projection)
    };

    let mut reports = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(leaves[i])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(input.shape()));
        let mut report = InputReport {
            checked: 0,
            skipped: 0,
            max_rel_err: 0.0,
            worst_index: None,
        };
        for j in sample_indices(input.len(), cfg.max_coords) {
            let x0 = input.data()[j];
            if x0.abs() < cfg.exclude_near_zero {
                report.skipped += 1;
                continue;
            }
            work[i].data_mut()[j] = x0 + cfg.step;
            let plus = eval(&work);
            work[i].data_mut()[j] = x0 - cfg.step;
            let minus = eval(&work);
            work[i].data_mut()[j] = x0;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let err = relative_error(analytic.data()[j], numeric, cfg.abs_floor);
            report.checked += 1;
            if err > report.max_rel_err || report.worst_index.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst_index = Some(j);
            }
        }
        reports.push(report);
    }
    let max_rel_err = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    GradCheckReport {
        passed: max_rel_err <= cfg.tol,
        inputs: reports,
        max_rel_err,
    }
}
