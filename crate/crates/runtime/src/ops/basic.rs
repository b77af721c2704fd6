use crate::error::{shape_err, Result};
use crate::ops::split_axis;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

fn same_shape<T: Scalar>(tape: &Tape<T>, op: &'static str, a: Var, b: Var) {
    let (sa, sb) = (tape.shape(a), tape.shape(b));
    assert!(sa == sb, "{}", shape_err(op, format!("{sa:?} vs {sb:?}")));
}

impl<T: Scalar> Tape<T> {
    pub fn add(&self, a: Var, b: Var) -> Var {
        same_shape(self, "add", a, b);
        let out = self.value(a).zip_map(&self.value(b), |x, y| x + y);
        self.record(&[a, b], out, |ctx| {
            vec![Some(ctx.grad.clone()), Some(ctx.grad.clone())]
        })
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        same_shape(self, "sub", a, b);
        let out = self.value(a).zip_map(&self.value(b), |x, y| x - y);
        self.record(&[a, b], out, |ctx| {
            vec![Some(ctx.grad.clone()), Some(ctx.grad.map(|g| -g))]
        })
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        same_shape(self, "mul", a, b);
        let out = self.value(a).zip_map(&self.value(b), |x, y| x * y);
        self.record(&[a, b], out, |ctx| {
            let (x, y) = (ctx.inputs[0], ctx.inputs[1]);
            vec![
                ctx.needs[0].then(|| ctx.grad.zip_map(y, |g, v| g * v)),
                ctx.needs[1].then(|| ctx.grad.zip_map(x, |g, v| g * v)),
            ]
        })
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        let out = self.value(a).map(|x| x * c);
        self.record(&[a], out, move |ctx| vec![Some(ctx.grad.map(|g| g * c))])
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        let out = self.value(a).map(|x| x + c);
        self.record(&[a], out, |ctx| vec![Some(ctx.grad.clone())])
    }

    /// `x + b` where `b`'s shape equals the trailing axes of `x`.
    pub fn add_trailing(&self, x: Var, b: Var) -> Var {
        let (xs, bs) = (self.shape(x), self.shape(b));
        assert!(
            xs.ends_with(&bs),
            "{}",
            shape_err("add_trailing", format!("{xs:?} + {bs:?}"))
        );
        let xv = self.value(x);
        let bv = self.value(b);
        let n = bv.len();
        let mut out = (*xv).clone();
        for chunk in out.data_mut().chunks_mut(n) {
            for (o, &v) in chunk.iter_mut().zip(bv.data()) {
                *o += v;
            }
        }
        self.record(&[x, b], out, move |ctx| {
            let gb = ctx.needs[1].then(|| {
                let mut acc = Tensor::zeros(ctx.inputs[1].shape());
                for chunk in ctx.grad.data().chunks(n) {
                    for (a, &g) in acc.data_mut().iter_mut().zip(chunk) {
                        *a += g;
                    }
                }
                acc
            });
            vec![Some(ctx.grad.clone()), gb]
        })
    }

    /// Per-channel constant affine map `x * scale[c] + shift[c]` over the last axis.
    pub fn channel_affine(&self, x: Var, scale: &[f64], shift: &[f64]) -> Var {
        let xv = self.value(x);
        let c = xv.last_dim();
        assert_eq!(scale.len(), c, "channel_affine scale length");
        assert_eq!(shift.len(), c, "channel_affine shift length");
        let scale: Vec<T> = scale.iter().map(|&v| T::from_f64(v)).collect();
        let shift: Vec<T> = shift.iter().map(|&v| T::from_f64(v)).collect();
        let mut out = (*xv).clone();
        for chunk in out.data_mut().chunks_mut(c) {
            for ((o, &s), &t) in chunk.iter_mut().zip(&scale).zip(&shift) {
                *o = *o * s + t;
            }
        }
        self.record(&[x], out, move |ctx| {
            let mut g = ctx.grad.clone();
            for chunk in g.data_mut().chunks_mut(c) {
                for (o, &s) in chunk.iter_mut().zip(&scale) {
                    *o *= s;
                }
            }
            vec![Some(g)]
        })
    }

    pub fn leaky_relu(&self, x: Var, slope: f64) -> Var {
        assert!(slope > 0.0 && slope < 1.0, "leaky_relu slope must lie in (0,1)");
        let s = T::from_f64(slope);
        let xv = self.value(x);
        self.log_kinks(|| xv.data().iter().map(|&v| v > T::zero()).collect());
        let out = xv.map(|v| if v > T::zero() { v } else { v * s });
        self.record(&[x], out, move |ctx| {
            vec![Some(ctx.grad.zip_map(ctx.inputs[0], |g, v| {
                if v > T::zero() {
                    g
                } else {
                    g * s
                }
            }))]
        })
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&self, x: Var) -> Var {
        let half = T::from_f64(0.5);
        let rsqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
        let out = self
            .value(x)
            .map(|v| half * v * (T::one() + (v * rsqrt2).erf()));
        self.record(&[x], out, move |ctx| {
            let inv_sqrt_2pi = T::from_f64(0.398_942_280_401_432_7);
            vec![Some(ctx.grad.zip_map(ctx.inputs[0], |g, v| {
                let cdf = half * (T::one() + (v * rsqrt2).erf());
                let pdf = inv_sqrt_2pi * (-half * v * v).exp();
                g * (cdf + v * pdf)
            }))]
        })
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&self, x: Var) -> Var {
        let out = self.value(x).map(softplus);
        self.record(&[x], out, |ctx| {
            vec![Some(ctx.grad.zip_map(ctx.inputs[0], |g, v| g * sigmoid(v)))]
        })
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.record(&[x], out, |ctx| {
            vec![Some(ctx.grad.zip_map(ctx.output, |g, s| g * s * (T::one() - s)))]
        })
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.record(&[x], out, |ctx| {
            vec![Some(Tensor::full(ctx.inputs[0].shape(), ctx.grad.item()))]
        })
    }

    pub fn mean(&self, x: Var) -> Var {
        let n = self.value(x).len();
        self.scale(self.sum(x), 1.0 / n as f64)
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Var {
        let out = (*self.value(x))
            .clone()
            .reshape(shape)
            .unwrap_or_else(|e| panic!("{e}"));
        self.record(&[x], out, |ctx| {
            vec![Some(
                ctx.grad
                    .clone()
                    .reshape(ctx.inputs[0].shape())
                    .expect("same element count"),
            )]
        })
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&self, xs: &[Var], axis: usize) -> Var {
        let shapes: Vec<Vec<usize>> = xs.iter().map(|&x| self.shape(x)).collect();
        let first = &shapes[0];
        for s in &shapes[1..] {
            let ok = s.len() == first.len()
                && s.iter()
                    .zip(first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            assert!(ok, "{}", shape_err("concat", format!("{shapes:?} on axis {axis}")));
        }
        let widths: Vec<usize> = shapes.iter().map(|s| s[axis]).collect();
        let total: usize = widths.iter().sum();
        let (outer, _, inner) = split_axis(first, axis);
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let mut out = vec![T::zero(); outer * total * inner];
        let mut offset = 0;
        for (&x, &wd) in xs.iter().zip(&widths) {
            let v = self.value(x);
            for o in 0..outer {
                let src = &v.data()[o * wd * inner..(o + 1) * wd * inner];
                let dst = (o * total + offset) * inner;
                out[dst..dst + wd * inner].copy_from_slice(src);
            }
            offset += wd;
        }
        let out = Tensor::new(&out_shape, out).expect("consistent shape");
        self.record(xs, out, move |ctx| {
            let mut offset = 0;
            widths
                .iter()
                .enumerate()
                .map(|(i, &wd)| {
                    let start = offset;
                    offset += wd;
                    ctx.needs[i].then(|| {
                        let mut g = Vec::with_capacity(outer * wd * inner);
                        for o in 0..outer {
                            let s = (o * total + start) * inner;
                            g.extend_from_slice(&ctx.grad.data()[s..s + wd * inner]);
                        }
                        Tensor::new(ctx.inputs[i].shape(), g).expect("consistent shape")
                    })
                })
                .collect()
        })
    }

    /// Elements `start..start+len` along `axis`.
    pub fn slice(&self, x: Var, axis: usize, start: usize, len: usize) -> Var {
        let shape = self.shape(x);
        assert!(
            start + len <= shape[axis] && len > 0,
            "{}",
            shape_err("slice", format!("{shape:?} axis {axis} [{start}, +{len})"))
        );
        let (outer, width, inner) = split_axis(&shape, axis);
        let v = self.value(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = (o * width + start) * inner;
            out.extend_from_slice(&v.data()[s..s + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let out = Tensor::new(&out_shape, out).expect("consistent shape");
        self.record(&[x], out, move |ctx| {
            let mut g = Tensor::zeros(ctx.inputs[0].shape());
            for o in 0..outer {
                let s = (o * width + start) * inner;
                g.data_mut()[s..s + len * inner]
                    .copy_from_slice(&ctx.grad.data()[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(g)]
        })
    }

    /// Repeat `x` along a new leading axis of extent `n`.
    pub fn repeat_leading(&self, x: Var, n: usize) -> Var {
        let v = self.value(x);
        let mut shape = vec![n];
        shape.extend_from_slice(v.shape());
        let data = v.data().repeat(n);
        let out = Tensor::new(&shape, data).expect("consistent shape");
        let m = v.len();
        self.record(&[x], out, move |ctx| {
            let mut g = Tensor::zeros(ctx.inputs[0].shape());
            for chunk in ctx.grad.data().chunks(m) {
                for (a, &b) in g.data_mut().iter_mut().zip(chunk) {
                    *a += b;
                }
            }
            vec![Some(g)]
        })
    }

    /// Zero-pad the spatial axes of `[B, H, W, C]`: `(top, bottom, left, right)`.
    pub fn pad_spatial(&self, x: Var, pad: (usize, usize, usize, usize)) -> Var {
        let (top, bottom, left, right) = pad;
        let shape = self.shape(x);
        assert_eq!(shape.len(), 4, "pad_spatial expects [B,H,W,C]");
        let (b, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
        let (ph, pw) = (h + top + bottom, w + left + right);
        let v = self.value(x);
        let mut out = Tensor::zeros(&[b, ph, pw, c]);
        for bi in 0..b {
            for y in 0..h {
                let src = ((bi * h + y) * w) * c;
                let dst = ((bi * ph + y + top) * pw + left) * c;
                out.data_mut()[dst..dst + w * c].copy_from_slice(&v.data()[src..src + w * c]);
            }
        }
        self.record(&[x], out, move |ctx| {
            vec![Some(crop(ctx.grad, (top, bottom, left, right)))]
        })
    }

    /// Inverse of [`Tape::pad_spatial`]: drop border rows/columns.
    pub fn crop_spatial(&self, x: Var, crop_by: (usize, usize, usize, usize)) -> Var {
        let out = crop(&self.value(x), crop_by);
        self.record(&[x], out, move |ctx| {
            let (top, bottom, left, right) = crop_by;
            let s = ctx.inputs[0].shape();
            let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
            let (ch, cw) = (h - top - bottom, w - left - right);
            let mut g = Tensor::zeros(s);
            for bi in 0..b {
                for y in 0..ch {
                    let src = ((bi * ch + y) * cw) * c;
                    let dst = ((bi * h + y + top) * w + left) * c;
                    g.data_mut()[dst..dst + cw * c]
                        .copy_from_slice(&ctx.grad.data()[src..src + cw * c]);
                }
            }
            vec![Some(g)]
        })
    }

    /// Fail if any recorded value of `x` is NaN or infinite.
    pub fn check_finite(&self, x: Var, op: &'static str) -> Result<()> {
        self.value(x).check_finite(op)
    }
}

fn crop<T: Scalar>(t: &Tensor<T>, (top, bottom, left, right): (usize, usize, usize, usize)) -> Tensor<T> {
    let s = t.shape();
    let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
    assert!(top + bottom < h && left + right < w, "crop removes whole image");
    let (ch, cw) = (h - top - bottom, w - left - right);
    let mut out = Vec::with_capacity(b * ch * cw * c);
    for bi in 0..b {
        for y in 0..ch {
            let src = ((bi * h + y + top) * w + left) * c;
            out.extend_from_slice(&t.data()[src..src + cw * c]);
        }
    }
    Tensor::new(&[b, ch, cw, c], out).expect("consistent shape")
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softplus<T: Scalar>(v: T) -> T {
    v.max(T::zero()) + (-v.abs()).exp().ln_1p()
}
