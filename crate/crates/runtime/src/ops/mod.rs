//! Differentiable operations, implemented as methods on [`Tape`](crate::Tape).
//!
//! Layouts are channels-last: images are `[B, H, W, C]`, token sequences
//! `[B, T, C]`, and weight matrices `[in, out]`.

mod attention;
mod basic;
mod conv;
mod linear;
mod loss;
mod norm;

pub use conv::{col2im, conv_out_extent, deconv_out_extent, im2col, ConvGeom};
pub use attention::attention_probs;
pub use loss::softmax_rows;

/// Split a shape into `(outer, axis, inner)` extents around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
