use crate::error::{shape_err, Result};
use crate::scalar::{matmul, Scalar, Trans};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

impl<T: Scalar> Tape<T> {
    /// Affine map over the last axis: `x: [..., Cin] @ w: [Cin, Cout] + b: [Cout]`.
    ///
    /// Equivalent to a 1x1 convolution on channels-last images.
    pub fn linear(&self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if ws.len() != 2 || xs.last() != Some(&ws[0]) {
            return Err(shape_err("linear", format!("x {xs:?}, w {ws:?}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [ws[1]] {
                return Err(shape_err("linear", format!("bias {:?} for w {ws:?}", self.shape(b))));
            }
        }
        let (cin, cout) = (ws[0], ws[1]);
        let rows = xs.iter().product::<usize>() / cin;
        let xv = self.value(x);
        let wv = self.value(w);
        let mut out = vec![T::zero(); rows * cout];
        matmul(xv.data(), Trans::No, wv.data(), Trans::No, &mut out, rows, cin, cout, false);
        if let Some(b) = b {
            let bv = self.value(b);
            for chunk in out.chunks_mut(cout) {
                for (o, &v) in chunk.iter_mut().zip(bv.data()) {
                    *o += v;
                }
            }
        }
        let mut out_shape = xs.clone();
        *out_shape.last_mut().expect("non-empty shape") = cout;
        let out = Tensor::new(&out_shape, out)?;
        out.check_finite("linear")?;
        let parents: Vec<Var> = std::iter::once(x).chain(std::iter::once(w)).chain(b).collect();
        Ok(self.record(&parents, out, move |ctx| {
            let dy = ctx.grad.data();
            let (xv, wv) = (ctx.inputs[0], ctx.inputs[1]);
            let dx = ctx.needs[0].then(|| {
                let mut dx = vec![T::zero(); rows * cin];
                matmul(dy, Trans::No, wv.data(), Trans::Yes, &mut dx, rows, cout, cin, false);
                Tensor::new(xv.shape(), dx).expect("input shape")
            });
            let dw = ctx.needs[1].then(|| {
                let mut dw = vec![T::zero(); cin * cout];
                matmul(xv.data(), Trans::Yes, dy, Trans::No, &mut dw, cin, rows, cout, false);
                Tensor::new(wv.shape(), dw).expect("weight shape")
            });
            let mut grads = vec![dx, dw];
            if ctx.inputs.len() == 3 {
                grads.push(ctx.needs[2].then(|| {
                    let mut db = Tensor::zeros(&[cout]);
                    for chunk in dy.chunks(cout) {
                        for (a, &g) in db.data_mut().iter_mut().zip(chunk) {
                            *a += g;
                        }
                    }
                    db
                }));
            }
            grads
        }))
    }
}

#[cfg(test)]
mod tests {
    use crate::{gradient_check, GradCheckConfig, Tape, Tensor, Var};

    #[test]
    fn linear_gradients() {
        let x = Tensor::from_f64(&[2, 3, 4], &(0..24).map(|i| (i as f64 * 0.7).sin()).collect::<Vec<_>>()).unwrap();
        let w = Tensor::from_f64(&[4, 5], &(0..20).map(|i| (i as f64 * 0.3).cos()).collect::<Vec<_>>()).unwrap();
        let b = Tensor::from_f64(&[5], &[0.1, 0.2, -0.3, 0.0, 0.5]).unwrap();
        let cfg = GradCheckConfig { tol: 1e-6, ..Default::default() };
        let r = gradient_check(&|t: &Tape<f64>, v: &[Var]| t.linear(v[0], v[1], Some(v[2])).unwrap(), &[x.clone(), w.clone(), b], &cfg);
        assert!(r.passed, "{r:?}");
        let r = gradient_check(&|t: &Tape<f64>, v: &[Var]| t.linear(v[0], v[1], None).unwrap(), &[x, w], &cfg);
        assert!(r.passed, "{r:?}");
    }
}
