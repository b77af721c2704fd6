//! Strided 2-D convolution and its transpose via im2col + GEMM.

use crate::error::{shape_err, Result, RuntimeError};
use crate::scalar::{matmul, Scalar, Trans};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Geometry shared by a convolution and its transpose.
///
/// `(h, w, c)` describe the high-resolution side, `(oh, ow)` the
/// low-resolution side that a convolution produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn patch(&self) -> usize {
        self.kernel * self.kernel * self.c
    }

    pub fn rows(&self) -> usize {
        self.batch * self.oh * self.ow
    }
}

pub fn conv_out_extent(extent: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    (extent + 2 * pad)
        .checked_sub(kernel)
        .map(|v| v / stride + 1)
}

pub fn deconv_out_extent(
    extent: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    output_padding: usize,
) -> Option<usize> {
    ((extent - 1) * stride + kernel + output_padding).checked_sub(2 * pad)
}

/// Gather `k x k` patches: `[B, H, W, C]` to `[B*oh*ow, k*k*C]`.
pub fn im2col<T: Scalar>(src: &[T], g: &ConvGeom) -> Vec<T> {
    let patch = g.patch();
    let mut col = vec![T::zero(); g.rows() * patch];
    let k = g.kernel;
    for b in 0..g.batch {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let row = ((b * g.oh + oy) * g.ow + ox) * patch;
                for ky in 0..k {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let s = ((b * g.h + iy as usize) * g.w + ix as usize) * g.c;
                        let d = row + (ky * k + kx) * g.c;
                        col[d..d + g.c].copy_from_slice(&src[s..s + g.c]);
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatter-add patches back into `[B, H, W, C]`.
pub fn col2im<T: Scalar>(col: &[T], g: &ConvGeom) -> Vec<T> {
    let patch = g.patch();
    let mut dst = vec![T::zero(); g.batch * g.h * g.w * g.c];
    let k = g.kernel;
    for b in 0..g.batch {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let row = ((b * g.oh + oy) * g.ow + ox) * patch;
                for ky in 0..k {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let d = ((b * g.h + iy as usize) * g.w + ix as usize) * g.c;
                        let s = row + (ky * k + kx) * g.c;
                        for (o, &v) in dst[d..d + g.c].iter_mut().zip(&col[s..s + g.c]) {
                            *o += v;
                        }
                    }
                }
            }
        }
    }
    dst
}

fn bias_grad<T: Scalar>(grad: &Tensor<T>, channels: usize) -> Tensor<T> {
    let mut db = Tensor::zeros(&[channels]);
    for chunk in grad.data().chunks(channels) {
        for (a, &g) in db.data_mut().iter_mut().zip(chunk) {
            *a += g;
        }
    }
    db
}

fn add_bias<T: Scalar>(out: &mut [T], bias: &[T]) {
    for chunk in out.chunks_mut(bias.len()) {
        for (o, &b) in chunk.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// Cross-correlation of `x: [B,H,W,Cin]` with `w: [k,k,Cin,Cout]` plus `b: [Cout]`.
    ///
    /// Spatial extents must be divisible by `stride`.
    pub fn conv2d(&self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 4 || ws.len() != 4 || ws[0] != ws[1] || ws[2] != xs[3] || bs != [ws[3]] {
            return Err(shape_err(
                "conv2d",
                format!("x {xs:?}, w {ws:?}, b {bs:?}"),
            ));
        }
        for extent in [xs[1], xs[2]] {
            if extent % stride != 0 {
                return Err(RuntimeError::NonDivisible {
                    op: "conv2d",
                    extent,
                    stride,
                });
            }
        }
        let k = ws[0];
        let (oh, ow) = match (
            conv_out_extent(xs[1], k, stride, pad),
            conv_out_extent(xs[2], k, stride, pad),
        ) {
            (Some(oh), Some(ow)) => (oh, ow),
            _ => return Err(shape_err("conv2d", format!("kernel {k} larger than padded input {xs:?}"))),
        };
        let g = ConvGeom {
            batch: xs[0],
            h: xs[1],
            w: xs[2],
            c: xs[3],
            kernel: k,
            stride,
            pad,
            oh,
            ow,
        };
        let cout = ws[3];
        let xv = self.value(x);
        let wv = self.value(w);
        let col = im2col(xv.data(), &g);
        let mut out = vec![T::zero(); g.rows() * cout];
        matmul(&col, Trans::No, wv.data(), Trans::No, &mut out, g.rows(), g.patch(), cout, false);
        add_bias(&mut out, self.value(b).data());
        let out = Tensor::new(&[g.batch, oh, ow, cout], out)?;
        out.check_finite("conv2d")?;
        let col = if self.is_recording() { col } else { Vec::new() };
        Ok(self.record(&[x, w, b], out, move |ctx| {
            let dy = ctx.grad.data();
            let wv = ctx.inputs[1];
            let dx = ctx.needs[0].then(|| {
                let mut dcol = vec![T::zero(); g.rows() * g.patch()];
                matmul(dy, Trans::No, wv.data(), Trans::Yes, &mut dcol, g.rows(), cout, g.patch(), false);
                Tensor::new(ctx.inputs[0].shape(), col2im(&dcol, &g)).expect("input shape")
            });
            let dw = ctx.needs[1].then(|| {
                let mut dw = vec![T::zero(); g.patch() * cout];
                matmul(&col, Trans::Yes, dy, Trans::No, &mut dw, g.patch(), g.rows(), cout, false);
                Tensor::new(wv.shape(), dw).expect("weight shape")
            });
            let db = ctx.needs[2].then(|| bias_grad(ctx.grad, cout));
            vec![dx, dw, db]
        }))
    }

    /// Transposed convolution: the adjoint of [`Tape::conv2d`] with the same
    /// kernel layout. `x: [B,h,w,Cin]`, `w: [k,k,Cout,Cin]`, `b: [Cout]`.
    ///
    /// Output extent is `(h-1)*stride - 2*pad + k + output_padding`.
    pub fn deconv2d(
        &self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
        output_padding: usize,
    ) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 4 || ws.len() != 4 || ws[0] != ws[1] || ws[3] != xs[3] || bs != [ws[2]] {
            return Err(shape_err(
                "deconv2d",
                format!("x {xs:?}, w {ws:?}, b {bs:?}"),
            ));
        }
        let k = ws[0];
        let cout = ws[2];
        let cin = ws[3];
        let (h, wd) = match (
            deconv_out_extent(xs[1], k, stride, pad, output_padding),
            deconv_out_extent(xs[2], k, stride, pad, output_padding),
        ) {
            (Some(h), Some(w)) if h > 0 && w > 0 => (h, w),
            _ => return Err(shape_err("deconv2d", format!("degenerate output for {xs:?}"))),
        };
        // The forward convolution over the output must land back on the input grid.
        if conv_out_extent(h, k, stride, pad) != Some(xs[1])
            || conv_out_extent(wd, k, stride, pad) != Some(xs[2])
        {
            return Err(shape_err(
                "deconv2d",
                format!("output padding {output_padding} inconsistent with stride {stride}"),
            ));
        }
        let g = ConvGeom {
            batch: xs[0],
            h,
            w: wd,
            c: cout,
            kernel: k,
            stride,
            pad,
            oh: xs[1],
            ow: xs[2],
        };
        let xv = self.value(x);
        let wv = self.value(w);
        let mut col = vec![T::zero(); g.rows() * g.patch()];
        matmul(xv.data(), Trans::No, wv.data(), Trans::Yes, &mut col, g.rows(), cin, g.patch(), false);
        let mut out = col2im(&col, &g);
        add_bias(&mut out, self.value(b).data());
        let out = Tensor::new(&[g.batch, h, wd, cout], out)?;
        out.check_finite("deconv2d")?;
        Ok(self.record(&[x, w, b], out, move |ctx| {
            let dcol = im2col(ctx.grad.data(), &g);
            let (xv, wv) = (ctx.inputs[0], ctx.inputs[1]);
            let dx = ctx.needs[0].then(|| {
                let mut dx = vec![T::zero(); g.rows() * cin];
                matmul(&dcol, Trans::No, wv.data(), Trans::No, &mut dx, g.rows(), g.patch(), cin, false);
                Tensor::new(xv.shape(), dx).expect("input shape")
            });
            let dw = ctx.needs[1].then(|| {
                let mut dw = vec![T::zero(); g.patch() * cin];
                matmul(&dcol, Trans::Yes, xv.data(), Trans::No, &mut dw, g.patch(), g.rows(), cin, false);
                Tensor::new(wv.shape(), dw).expect("weight shape")
            });
            let db = ctx.needs[2].then(|| bias_grad(ctx.grad, cout));
            vec![dx, dw, db]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{gradient_check, GradCheckConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random<T: Scalar>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| T::from_f64(rng.random_range(-1.0..1.0))).collect()).unwrap()
    }

    #[test]
    fn stride_two_halves_extent() {
        let tape = Tape::<f32>::inference();
        let x = tape.constant(Tensor::zeros(&[1, 64, 64, 3]));
        let w = tape.constant(Tensor::zeros(&[5, 5, 3, 32]));
        let b = tape.constant(Tensor::zeros(&[32]));
        let y = tape.conv2d(x, w, b, 2, 2).unwrap();
        assert_eq!(tape.shape(y), vec![1, 32, 32, 32]);
    }

    #[test]
    fn scalar_affine_case() {
        let tape = Tape::<f32>::inference();
        let x = tape.constant(Tensor::full(&[1, 1, 1, 1], 3.0));
        let w = tape.constant(Tensor::full(&[1, 1, 1, 1], 2.0));
        let b = tape.constant(Tensor::full(&[1], 0.5));
        let y = tape.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(tape.value(y).item(), 6.5);
    }

    #[test]
    fn rejects_bad_shapes() {
        let tape = Tape::<f32>::inference();
        let x = tape.constant(Tensor::zeros(&[1, 6, 6, 3]));
        let w = tape.constant(Tensor::zeros(&[5, 5, 4, 8]));
        let b = tape.constant(Tensor::zeros(&[8]));
        assert!(matches!(tape.conv2d(x, w, b, 2, 2), Err(RuntimeError::Shape { .. })));
        let x = tape.constant(Tensor::zeros(&[1, 7, 8, 4]));
        assert!(matches!(
            tape.conv2d(x, w, b, 2, 2),
            Err(RuntimeError::NonDivisible { extent: 7, .. })
        ));
    }

    #[test]
    fn deconv_doubles_extent() {
        let tape = Tape::<f32>::inference();
        let x = tape.constant(Tensor::zeros(&[2, 4, 4, 6]));
        let w = tape.constant(Tensor::zeros(&[5, 5, 5, 6]));
        let b = tape.constant(Tensor::zeros(&[5]));
        let y = tape.deconv2d(x, w, b, 2, 2, 1).unwrap();
        assert_eq!(tape.shape(y), vec![2, 8, 8, 5]);
        assert!(tape.deconv2d(x, w, b, 2, 2, 3).is_err());
    }

    /// <conv(x), y> == <x, deconv(y)> for zero bias and a shared kernel.
    #[test]
    fn conv_and_deconv_are_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..100 {
            let (cin, cout) = (1 + trial % 3, 1 + trial % 4);
            let tape = Tape::<f32>::inference();
            let xt: Tensor<f32> = random(&[1, 4, 4, cin], &mut rng);
            let yt: Tensor<f32> = random(&[1, 2, 2, cout], &mut rng);
            let w = tape.constant(random(&[5, 5, cin, cout], &mut rng));
            let x = tape.constant(xt.clone());
            let y = tape.constant(yt.clone());
            let zb_out = tape.constant(Tensor::zeros(&[cout]));
            let zb_in = tape.constant(Tensor::zeros(&[cin]));
            let cx = tape.value(tape.conv2d(x, w, zb_out, 2, 2).unwrap());
            let dy = tape.value(tape.deconv2d(y, w, zb_in, 2, 2, 1).unwrap());
            let lhs = cx.dot(&yt);
            let rhs = xt.dot(&dy);
            assert!((lhs - rhs).abs() <= 1e-5 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn conv_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inputs = vec![
            random::<f64>(&[1, 8, 8, 2], &mut rng),
            random::<f64>(&[5, 5, 2, 3], &mut rng),
            random::<f64>(&[3], &mut rng),
        ];
        let cfg = GradCheckConfig { tol: 1e-6, ..Default::default() };
        let r = gradient_check(&|t: &Tape<f64>, v: &[Var]| t.conv2d(v[0], v[1], v[2], 2, 2).unwrap(), &inputs, &cfg);
        assert!(r.passed, "{r:?}");
        let r = gradient_check(&|t: &Tape<f64>, v: &[Var]| t.conv2d(v[0], v[1], v[2], 1, 2).unwrap(), &inputs, &cfg);
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn deconv_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inputs = vec![
            random::<f64>(&[2, 4, 4, 3], &mut rng),
            random::<f64>(&[5, 5, 2, 3], &mut rng),
            random::<f64>(&[2], &mut rng),
        ];
        let cfg = GradCheckConfig { tol: 1e-6, ..Default::default() };
        let r = gradient_check(
            &|t: &Tape<f64>, v: &[Var]| t.deconv2d(v[0], v[1], v[2], 2, 2, 1).unwrap(),
            &inputs,
            &cfg,
        );
        assert!(r.passed, "{r:?}");
    }
}
