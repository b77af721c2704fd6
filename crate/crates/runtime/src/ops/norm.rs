use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

impl<T: Scalar> Tape<T> {
    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xs = self.shape(x);
        let c = *xs.last().expect("non-empty shape");
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err(
                "layer_norm",
                format!("x {xs:?}, gamma {:?}, beta {:?}", self.shape(gamma), self.shape(beta)),
            ));
        }
        let eps = T::from_f64(eps);
        let n = T::from_f64(c as f64);
        let xv = self.value(x);
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let rows = xv.len() / c;
        let mut xhat = vec![T::zero(); xv.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.len()];
        for r in 0..rows {
            let row = &xv.data()[r * c..(r + 1) * c];
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[r * c + j] = h;
                out[r * c + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let out = Tensor::new(&xs, out)?;
        Ok(self.record(&[x, gamma, beta], out, move |ctx| {
            let dy = ctx.grad.data();
            let g = ctx.inputs[1].data();
            let dx = ctx.needs[0].then(|| {
                let mut dx = vec![T::zero(); dy.len()];
                for r in 0..rows {
                    let (dyr, xh) = (&dy[r * c..(r + 1) * c], &xhat[r * c..(r + 1) * c]);
                    let mut mean_d = T::zero();
                    let mut mean_dx = T::zero();
                    for j in 0..c {
                        let d = dyr[j] * g[j];
                        mean_d += d;
                        mean_dx += d * xh[j];
                    }
                    mean_d = mean_d / n;
                    mean_dx = mean_dx / n;
                    for j in 0..c {
                        let d = dyr[j] * g[j];
                        dx[r * c + j] = rstd[r] * (d - mean_d - xh[j] * mean_dx);
                    }
                }
                Tensor::new(ctx.inputs[0].shape(), dx).expect("input shape")
            });
            let dg = ctx.needs[1].then(|| {
                let mut dg = Tensor::zeros(&[c]);
                for (i, (&d, &h)) in dy.iter().zip(&xhat).enumerate() {
                    dg.data_mut()[i % c] += d * h;
                }
                dg
            });
            let db = ctx.needs[2].then(|| {
                let mut db = Tensor::zeros(&[c]);
                for (i, &d) in dy.iter().enumerate() {
                    db.data_mut()[i % c] += d;
                }
                db
            });
            vec![dx, dg, db]
        }))
    }
}
