use crate::error::{shape_err, Result};
use crate::ops::loss::softmax_in_place;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

struct Dims {
    batch: usize,
    tokens: usize,
    channels: usize,
    heads: usize,
    head_dim: usize,
}

impl Dims {
    /// Offset of head `h` of batch item `b` in a `[B, T, C]` buffer.
    fn base(&self, b: usize, h: usize) -> usize {
        b * self.tokens * self.channels + h * self.head_dim
    }
}

/// Row-softmaxed attention weights `softmax(q k^T / sqrt(d))`, `[B, heads, T, T]`.
fn attention_weights<T: Scalar>(q: &[T], k: &[T], d: &Dims) -> Vec<T> {
    let t = d.tokens;
    let cs = d.channels as isize;
    let scale = T::one() / T::from_f64(d.head_dim as f64).sqrt();
    let mut probs = vec![T::zero(); d.batch * d.heads * t * t];
    for b in 0..d.batch {
        for h in 0..d.heads {
            let base = d.base(b, h);
            let p = &mut probs[(b * d.heads + h) * t * t..][..t * t];
            T::gemm(
                t, d.head_dim, t, scale,
                &q[base..], cs, 1,
                &k[base..], 1, cs,
                T::zero(), p, t as isize, 1,
            );
            for row in p.chunks_mut(t) {
                softmax_in_place(row);
            }
        }
    }
    probs
}

/// Attention weights for inspection, shape `[B, heads, T, T]`.
pub fn attention_probs<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, heads: usize) -> Tensor<T> {
    let s = q.shape();
    let d = Dims {
        batch: s[0],
        tokens: s[1],
        channels: s[2],
        heads,
        head_dim: s[2] / heads,
    };
    let probs = attention_weights(q.data(), k.data(), &d);
    Tensor::new(&[d.batch, heads, d.tokens, d.tokens], probs).expect("consistent shape")
}

impl<T: Scalar> Tape<T> {
    /// Multi-head scaled dot-product attention core on projected `q`, `k`, `v`
    /// of shape `[B, T, C]`; heads split the channel axis evenly.
    pub fn attention(&self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let qs = self.shape(q);
        if qs.len() != 3 || self.shape(k) != qs || self.shape(v) != qs {
            return Err(shape_err(
                "attention",
                format!("q {qs:?}, k {:?}, v {:?}", self.shape(k), self.shape(v)),
            ));
        }
        if heads == 0 || qs[2] % heads != 0 {
            return Err(shape_err("attention", format!("{} channels over {heads} heads", qs[2])));
        }
        let d = Dims {
            batch: qs[0],
            tokens: qs[1],
            channels: qs[2],
            heads,
            head_dim: qs[2] / heads,
        };
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let probs = attention_weights(qv.data(), kv.data(), &d);
        let t = d.tokens;
        let cs = d.channels as isize;
        let mut out = vec![T::zero(); qv.len()];
        for b in 0..d.batch {
            for h in 0..heads {
                let base = d.base(b, h);
                let p = &probs[(b * heads + h) * t * t..][..t * t];
                T::gemm(
                    t, t, d.head_dim, T::one(),
                    p, t as isize, 1,
                    &vv.data()[base..], cs, 1,
                    T::zero(), &mut out[base..], cs, 1,
                );
            }
        }
        let out = Tensor::new(&qs, out)?;
        Ok(self.record(&[q, k, v], out, move |ctx| {
            let (qv, kv, vv) = (ctx.inputs[0], ctx.inputs[1], ctx.inputs[2]);
            let dy = ctx.grad.data();
            let n = qv.len();
            let scale = T::one() / T::from_f64(d.head_dim as f64).sqrt();
            let mut dq = vec![T::zero(); n];
            let mut dk = vec![T::zero(); n];
            let mut dv = vec![T::zero(); n];
            let mut dp = vec![T::zero(); t * t];
            for b in 0..d.batch {
                for h in 0..d.heads {
                    let base = d.base(b, h);
                    let p = &probs[(b * d.heads + h) * t * t..][..t * t];
                    // dV = P^T dO
                    T::gemm(
                        t, t, d.head_dim, T::one(),
                        p, 1, t as isize,
                        &dy[base..], cs, 1,
                        T::zero(), &mut dv[base..], cs, 1,
                    );
                    // dP = dO V^T
                    T::gemm(
                        t, d.head_dim, t, T::one(),
                        &dy[base..], cs, 1,
                        &vv.data()[base..], 1, cs,
                        T::zero(), &mut dp, t as isize, 1,
                    );
                    // dS = P * (dP - rowsum(dP * P)), folded with the logit scale.
                    for (prow, dprow) in p.chunks(t).zip(dp.chunks_mut(t)) {
                        let dot: T = prow.iter().zip(dprow.iter()).map(|(&a, &g)| a * g).sum();
                        for (g, &a) in dprow.iter_mut().zip(prow) {
                            *g = a * (*g - dot) * scale;
                        }
                    }
                    // dQ = dS K, dK = dS^T Q
                    T::gemm(
                        t, t, d.head_dim, T::one(),
                        &dp, t as isize, 1,
                        &kv.data()[base..], cs, 1,
                        T::zero(), &mut dq[base..], cs, 1,
                    );
                    T::gemm(
                        t, t, d.head_dim, T::one(),
                        &dp, 1, t as isize,
                        &qv.data()[base..], cs, 1,
                        T::zero(), &mut dk[base..], cs, 1,
                    );
                }
            }
            let shape = qv.shape();
            vec![
                Some(Tensor::new(shape, dq).expect("shape")),
                Some(Tensor::new(shape, dk).expect("shape")),
                Some(Tensor::new(shape, dv).expect("shape")),
            ]
        }))
    }
}
