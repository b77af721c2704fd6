//! Decoder-classifier: token embedding, pre-norm Transformer blocks and the
//! class-token head.

use ecat_runtime::{init, ParamId, ParamKind, ParamStore, Result, Scalar, Tape, Var};
use rand::Rng;

use crate::config::ModelConfig;
use crate::layers::{Linear, Norm};

#[derive(Debug, Clone)]
pub struct Block {
    pub ln1: Norm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub proj: Linear,
    pub ln2: Norm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Block {
    fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, c: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            ln1: Norm::new(store, &format!("{name}.ln1"), c),
            q: Linear::trunc(store, &format!("{name}.attn.q"), c, c, rng),
            k: Linear::trunc(store, &format!("{name}.attn.k"), c, c, rng),
            v: Linear::trunc(store, &format!("{name}.attn.v"), c, c, rng),
            proj: Linear::trunc(store, &format!("{name}.attn.proj"), c, c, rng),
            ln2: Norm::new(store, &format!("{name}.ln2"), c),
            fc1: Linear::trunc(store, &format!("{name}.ffn.fc1"), c, hidden, rng),
            fc2: Linear::trunc(store, &format!("{name}.ffn.fc2"), hidden, c, rng),
        }
    }

    /// Multi-head self-attention on `[B,T,C]`, output projection included.
    pub fn attention<T: Scalar>(&self, tape: &Tape<T>, store: &ParamStore<T>, x: Var, heads: usize) -> Result<Var> {
        let q = self.q.forward(tape, store, x)?;
        let k = self.k.forward(tape, store, x)?;
        let v = self.v.forward(tape, store, x)?;
        let a = tape.attention(q, k, v, heads)?;
        self.proj.forward(tape, store, a)
    }

    pub fn feed_forward<T: Scalar>(&self, tape: &Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = tape.gelu(self.fc1.forward(tape, store, x)?);
        self.fc2.forward(tape, store, h)
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, store: &ParamStore<T>, x: Var, heads: usize) -> Result<Var> {
        let a = self.attention(tape, store, self.ln1.forward(tape, store, x)?, heads)?;
        let x = tape.add(x, a);
        let f = self.feed_forward(tape, store, self.ln2.forward(tape, store, x)?)?;
        Ok(tape.add(x, f))
    }
}

/// Output of [`TransformerHead::forward`].
#[derive(Debug, Clone)]
pub struct HeadOutput {
    /// Spatial rows after blocks 1..=3, each `[B,h,w,C]`.
    pub intermediates: Vec<Var>,
    /// Class token after the last block, `[B,C]`.
    pub class_token: Var,
}

#[derive(Debug, Clone)]
pub struct TransformerHead {
    /// 1x1 convolution `M -> C`.
    pub expand: Linear,
    pub pos_embed: ParamId,
    pub class_embed: ParamId,
    pub blocks: Vec<Block>,
    pub head_norm: Norm,
    pub head: Linear,
    heads: usize,
    latent_hw: (usize, usize),
    embed_c: usize,
}

/// Number of blocks whose outputs feed reconstruction.
pub const TAPPED_BLOCKS: usize = 3;

impl TransformerHead {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut R) -> Self {
        let c = cfg.embed_c;
        let expand = Linear::he(store, "embed.expand", cfg.channels_m, c, rng);
        let pos_embed = store.add("embed.pos", init::trunc_normal(&[cfg.tokens(), c], 0.02, rng), ParamKind::NoDecay);
        let class_embed = store.add("embed.cls", init::trunc_normal(&[1, c], 0.02, rng), ParamKind::NoDecay);
        let blocks = (0..cfg.depth_l)
            .map(|i| Block::new(store, &format!("blocks.{i}"), c, cfg.ffn_hidden(), rng))
            .collect();
        Self {
            expand,
            pos_embed,
            class_embed,
            blocks,
            head_norm: Norm::new(store, "head.norm", c),
            head: Linear::trunc(store, "head.fc", c, cfg.num_classes, rng),
            heads: cfg.heads,
            latent_hw: cfg.latent_hw(),
            embed_c: c,
        }
    }

    /// `zhat: [B,h,w,M]` -> `(seq: [B,T+1,C], z0: [B,h,w,C])`. Row 0 of each
    /// sequence is the class embedding; spatial rows follow in raster order.
    pub fn embed<T: Scalar>(&self, tape: &Tape<T>, store: &ParamStore<T>, zhat: Var) -> Result<(Var, Var)> {
        let s = tape.shape(zhat);
        let (h, w) = self.latent_hw;
        if s.len() != 4 || s[1] != h || s[2] != w {
            return Err(ecat_runtime::RuntimeError::Shape {
                op: "embed_tokens",
                detail: format!("latent {s:?} vs position table {h}x{w}"),
            });
        }
        let b = s[0];
        let z0 = self.expand.forward(tape, store, zhat)?;
        let flat = tape.reshape(z0, &[b, h * w, self.embed_c]);
        let tokens = tape.add_trailing(flat, tape.param(store, self.pos_embed));
        let cls = tape.repeat_leading(tape.param(store, self.class_embed), b);
        Ok((tape.concat(&[cls, tokens], 1), z0))
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, store: &ParamStore<T>, seq: Var) -> Result<HeadOutput> {
        let s = tape.shape(seq);
        let (b, t1, c) = (s[0], s[1], s[2]);
        let (h, w) = self.latent_hw;
        let mut x = seq;
        let mut intermediates = Vec::with_capacity(TAPPED_BLOCKS);
        for (i, block) in self.blocks.iter().enumerate() {
            x = block.forward(tape, store, x, self.heads)?;
            if i < TAPPED_BLOCKS {
                let rows = tape.slice(x, 1, 1, t1 - 1);
                intermediates.push(tape.reshape(rows, &[b, h, w, c]));
            }
        }
        let cls = tape.reshape(tape.slice(x, 1, 0, 1), &[b, c]);
        Ok(HeadOutput { intermediates, class_token: cls })
    }

    /// Class logits `[B,K]` from the final class token.
    pub fn logits<T: Scalar>(&self, tape: &Tape<T>, store: &ParamStore<T>, class_token: Var) -> Result<Var> {
        let n = self.head_norm.forward(tape, store, class_token)?;
        self.head.forward(tape, store, n)
    }
}
