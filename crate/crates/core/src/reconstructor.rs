//! Feature aggregation over `z0` and the first three block outputs, then the
//! synthesis transform back to an image.

use ecat_runtime::{ParamStore, Result, RuntimeError, Scalar, Tape, Tensor, Var};
use rand::Rng;

use crate::config::{ModelConfig, LEAKY_SLOPE};
use crate::layers::{leaky_gain, Deconv, Linear};
use crate::transformer::TAPPED_BLOCKS;

/// Which of the tapped block outputs take part in aggregation. Dropped
/// features are replaced by zeros; the branch weights stay in place.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Keep(pub [bool; TAPPED_BLOCKS]);

impl Keep {
    pub const ALL: Keep = Keep([true; TAPPED_BLOCKS]);
    pub const NONE: Keep = Keep([false; TAPPED_BLOCKS]);

    /// The first `n` block outputs kept, the rest zeroed.
    pub fn first(n: usize) -> Self {
        Keep(std::array::from_fn(|i| i < n))
    }

    pub fn label(&self) -> String {
        let kept: Vec<String> = (0..TAPPED_BLOCKS).filter(|&i| self.0[i]).map(|i| format!("z{}", i + 1)).collect();
        if kept.is_empty() {
            "none".into()
        } else {
            kept.join("+")
        }
    }
}

#[derive(Debug, Clone)]
pub struct FeatureAggregation {
    /// One `C -> C/4` reduction per input, in the order `[z0, z1, z2, z3]`.
    pub reduce: [Linear; 4],
    pub fuse: Linear,
}

impl FeatureAggregation {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut R) -> Self {
        let c = cfg.embed_c;
        Self {
            reduce: std::array::from_fn(|i| Linear::he(store, &format!("aggregate.reduce{i}"), c, c / 4, rng)),
            fuse: Linear::he(store, "aggregate.fuse", c, c, rng),
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &Tape<T>,
        store: &ParamStore<T>,
        z0: Var,
        blocks: &[Var],
        keep: Keep,
    ) -> Result<Var> {
        if blocks.len() != TAPPED_BLOCKS {
            return Err(RuntimeError::Invalid(format!(
                "aggregation needs {TAPPED_BLOCKS} block outputs, got {}",
                blocks.len()
            )));
        }
        let shape = tape.shape(z0);
        let mut parts = vec![self.reduce[0].forward(tape, store, z0)?];
        for (i, &zi) in blocks.iter().enumerate() {
            if tape.shape(zi) != shape {
                return Err(RuntimeError::Shape {
                    op: "feature_aggregate",
                    detail: format!("z0 {shape:?} vs z{} {:?}", i + 1, tape.shape(zi)),
                });
            }
            let input = if keep.0[i] { zi } else { tape.constant(Tensor::zeros(&shape)) };
            parts.push(self.reduce[i + 1].forward(tape, store, input)?);
        }
        let cat = tape.concat(&parts, shape.len() - 1);
        self.fuse.forward(tape, store, cat)
    }
}

/// Four stride-2 5x5 deconvolutions, widths `[N, N, N, 3]`.
#[derive(Debug, Clone)]
pub struct SynthesisTransform {
    pub layers: [Deconv; 4],
}

impl SynthesisTransform {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut R) -> Self {
        let (c, n) = (cfg.embed_c, cfg.channels_n);
        let widths = [(c, n), (n, n), (n, n), (n, 3)];
        Self {
            layers: std::array::from_fn(|i| {
                let gain = if i < 3 { leaky_gain() } else { 1.0 };
                let (cin, cout) = widths[i];
                Deconv::new(store, &format!("synthesis.deconv{i}"), 5, cin, cout, 2, gain, rng)
            }),
        }
    }

    /// `[B,h,w,C]` -> `[B,16h,16w,3]` in the normalized domain.
    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, store, h)?;
            if i < 3 {
                h = tape.leaky_relu(h, LEAKY_SLOPE);
            }
        }
        Ok(h)
    }
}
