use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}

/// Softmax over the last axis of a plain tensor.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    let c = x.last_dim();
    for row in out.data_mut().chunks_mut(c) {
        softmax_in_place(row);
    }
    out
}

impl<T: Scalar> Tape<T> {
    /// Softmax over the last axis.
    pub fn softmax(&self, x: Var) -> Var {
        let out = softmax_rows(&self.value(x));
        let c = out.last_dim();
        self.record(&[x], out, move |ctx| {
            let mut dx = ctx.grad.clone();
            for (g, p) in dx.data_mut().chunks_mut(c).zip(ctx.output.data().chunks(c)) {
                let dot: T = g.iter().zip(p).map(|(&a, &b)| a * b).sum();
                for (gi, &pi) in g.iter_mut().zip(p) {
                    *gi = pi * (*gi - dot);
                }
            }
            vec![Some(dx)]
        })
    }

    /// Mean natural-log cross-entropy of `logits: [B, K]` against class labels.
    pub fn cross_entropy(&self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != labels.len() || labels.iter().any(|&l| l >= s[1]) {
            return Err(shape_err(
                "cross_entropy",
                format!("logits {s:?} with {} labels", labels.len()),
            ));
        }
        let (b, k) = (s[0], s[1]);
        let probs = softmax_rows(&self.value(logits));
        let lv = self.value(logits);
        let mut total = T::zero();
        for (i, &y) in labels.iter().enumerate() {
            let row = &lv.data()[i * k..(i + 1) * k];
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            total += lse - row[y];
        }
        let inv_b = T::one() / T::from_f64(b as f64);
        let out = Tensor::scalar(total * inv_b);
        let labels = labels.to_vec();
        Ok(self.record(&[logits], out, move |ctx| {
            let g = ctx.grad.item() * inv_b;
            let mut dx = probs.clone();
            for (i, &y) in labels.iter().enumerate() {
                dx.data_mut()[i * k + y] -= T::one();
            }
            vec![Some(dx.map(|v| v * g))]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{gradient_check, GradCheckConfig};
    use proptest::prelude::*;

    fn sm(v: &[f64]) -> Vec<f64> {
        softmax_rows(&Tensor::from_f64(&[v.len()], v).unwrap()).into_data()
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(sm(&[0.0, 0.0]), vec![0.5, 0.5]);
        let big = sm(&[1000.0, 0.0]);
        assert!((big[0] - 1.0).abs() < 1e-12 && big[1] < 1e-300 && big[1] >= 0.0);
        let logs = sm(&[1f64.ln(), 2f64.ln(), 3f64.ln()]);
        for (p, want) in logs.iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((p - want).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_logits_give_log_k() {
        let tape = Tape::<f64>::inference();
        let l = tape.constant(Tensor::zeros(&[3, 10]));
        let ce = tape.cross_entropy(l, &[0, 4, 9]).unwrap();
        assert!((tape.value(ce).item() - 10f64.ln()).abs() < 1e-12);
        assert!(tape.cross_entropy(l, &[0, 4, 10]).is_err());
    }

    #[test]
    fn softmax_and_cross_entropy_gradients() {
        let x = Tensor::from_f64(&[2, 4], &[0.3, -1.0, 2.0, 0.1, 1.5, 0.2, -0.7, 0.0]).unwrap();
        let cfg = GradCheckConfig { tol: 1e-6, ..Default::default() };
        let r = gradient_check(&|t: &Tape<f64>, v: &[Var]| t.softmax(v[0]), &[x.clone()], &cfg);
        assert!(r.passed, "{r:?}");
        let r = gradient_check(&|t: &Tape<f64>, v: &[Var]| t.cross_entropy(v[0], &[2, 0]).unwrap(), &[x], &cfg);
        assert!(r.passed, "{r:?}");
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_permutation_equivariant(
            v in proptest::collection::vec(-50.0f64..50.0, 1..16),
            rot in 0usize..16,
        ) {
            let p = sm(&v);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            let r = rot % v.len();
            let mut rotated = v.clone();
            rotated.rotate_left(r);
            let mut pr = p.clone();
            pr.rotate_left(r);
            let q = sm(&rotated);
            for (a, b) in q.iter().zip(&pr) {
                prop_assert!((a - b).abs() < 1e-15);
            }
        }
    }
}
