//! Architecture and training hyperparameters, with named profiles and a
//! `key=value` text format.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{CodecError, Result};

/// Main-latent downsampling factor of the analysis transform.
pub const LATENT_STRIDE: usize = 16;
/// Additional downsampling of the hyper-encoder.
pub const HYPER_STRIDE: usize = 4;
pub const LEAKY_SLOPE: f64 = 0.01;
pub const LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_h: usize,
    pub input_w: usize,
    /// Convolution width `N` of the analysis/synthesis and hyper networks.
    pub channels_n: usize,
    /// Latent channels `M`.
    pub channels_m: usize,
    /// Transformer embedding width `C`.
    pub embed_c: usize,
    /// Number of Transformer blocks `L`.
    pub depth_l: usize,
    pub heads: usize,
    pub num_classes: usize,
    pub ffn_ratio: f64,
}

impl ModelConfig {
    /// CPU-sized profile used for training and tests.
    pub fn desk() -> Self {
        Self {
            input_h: 64,
            input_w: 64,
            channels_n: 32,
            channels_m: 48,
            embed_c: 96,
            depth_l: 4,
            heads: 4,
            num_classes: 10,
            ffn_ratio: 4.0,
        }
    }

    /// Full-size ImageNet architecture.
    pub fn paper() -> Self {
        Self {
            input_h: 224,
            input_w: 224,
            channels_n: 128,
            channels_m: 192,
            embed_c: 384,
            depth_l: 12,
            heads: 6,
            num_classes: 1000,
            ffn_ratio: 4.0,
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(CodecError::Config(format!("unknown profile {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CodecError::Config(m));
        for (name, v) in [
            ("input_h", self.input_h),
            ("input_w", self.input_w),
            ("channels_n", self.channels_n),
            ("channels_m", self.channels_m),
            ("embed_c", self.embed_c),
            ("heads", self.heads),
            ("num_classes", self.num_classes),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.input_h % LATENT_STRIDE != 0 || self.input_w % LATENT_STRIDE != 0 {
            return fail(format!(
                "input {}x{} must be a multiple of {LATENT_STRIDE}",
                self.input_h, self.input_w
            ));
        }
        if self.embed_c % self.heads != 0 {
            return fail(format!("embed_c {} not divisible by heads {}", self.embed_c, self.heads));
        }
        if self.embed_c % 4 != 0 {
            return fail(format!("embed_c {} not divisible by 4", self.embed_c));
        }
        if self.depth_l < 3 {
            return fail(format!("depth_l {} < 3; reconstruction taps blocks 1-3", self.depth_l));
        }
        if !(self.ffn_ratio > 0.0) || self.ffn_hidden() == 0 {
            return fail(format!("ffn_ratio {} must be positive", self.ffn_ratio));
        }
        if self.input_h > u16::MAX as usize || self.input_w > u16::MAX as usize {
            return fail("input extent exceeds 65535".into());
        }
        Ok(())
    }

    pub fn ffn_hidden(&self) -> usize {
        (self.ffn_ratio * self.embed_c as f64).round() as usize
    }

    /// Spatial extent `(h, w)` of the main latent.
    pub fn latent_hw(&self) -> (usize, usize) {
        (self.input_h / LATENT_STRIDE, self.input_w / LATENT_STRIDE)
    }

    pub fn tokens(&self) -> usize {
        let (h, w) = self.latent_hw();
        h * w
    }

    /// Zero padding `(top, bottom, left, right)` that brings the latent to a
    /// multiple of the hyper stride before hyper-encoding.
    pub fn hyper_padding(&self) -> (usize, usize, usize, usize) {
        let (h, w) = self.latent_hw();
        let split = |e: usize| {
            let total = e.div_ceil(HYPER_STRIDE) * HYPER_STRIDE - e;
            (total / 2, total - total / 2)
        };
        let (top, bottom) = split(h);
        let (left, right) = split(w);
        (top, bottom, left, right)
    }

    /// Spatial extent of the hyper-latent.
    pub fn hyper_hw(&self) -> (usize, usize) {
        let (h, w) = self.latent_hw();
        (h.div_ceil(HYPER_STRIDE), w.div_ceil(HYPER_STRIDE))
    }

    pub fn pixels(&self) -> usize {
        self.input_h * self.input_w
    }

    /// Canonical `key=value` rendering; also the digest preimage.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("input_h", self.input_h.to_string()),
            ("input_w", self.input_w.to_string()),
            ("channels_n", self.channels_n.to_string()),
            ("channels_m", self.channels_m.to_string()),
            ("embed_c", self.embed_c.to_string()),
            ("depth_l", self.depth_l.to_string()),
            ("heads", self.heads.to_string()),
            ("num_classes", self.num_classes.to_string()),
            ("ffn_ratio", format!("{}", self.ffn_ratio)),
        ]
    }

    /// First 8 bytes of SHA-256 over [`ModelConfig::to_text`].
    pub fn digest(&self) -> [u8; 8] {
        let hash = Sha256::digest(self.to_text().as_bytes());
        let mut out = [0u8; 8];
        out.copy_from_slice(&hash[..8]);
        out
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<bool> {
        let parse_usize = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| CodecError::Config(format!("{key}: expected integer, got {v:?}")))
        };
        match key {
            "input_h" => self.input_h = parse_usize(value)?,
            "input_w" => self.input_w = parse_usize(value)?,
            "channels_n" => self.channels_n = parse_usize(value)?,
            "channels_m" => self.channels_m = parse_usize(value)?,
            "embed_c" => self.embed_c = parse_usize(value)?,
            "depth_l" => self.depth_l = parse_usize(value)?,
            "heads" => self.heads = parse_usize(value)?,
            "num_classes" => self.num_classes = parse_usize(value)?,
            "ffn_ratio" => {
                self.ffn_ratio = value
                    .parse()
                    .map_err(|_| CodecError::Config(format!("ffn_ratio: bad number {value:?}")))?
            }
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Which terms of the objective are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// No quantization, no hyper-prior, no rate term.
    Pretrain,
    /// Noise-relaxed quantization, hyper-prior and rate term.
    Full,
}

impl Stage {
    pub fn tag(self) -> u8 {
        match self {
            Stage::Pretrain => 1,
            Stage::Full => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(Stage::Pretrain),
            2 => Some(Stage::Full),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub profile: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub seed: u64,
    /// Decoupled weight decay; 0 gives plain Adam.
    pub weight_decay: f64,
    pub augment: bool,
}

impl TrainConfig {
    pub fn desk_stage1() -> Self {
        Self {
            profile: "desk".into(),
            epochs: 50,
            batch_size: 32,
            base_lr: 1e-3,
            warmup_epochs: 2,
            seed: 0,
            weight_decay: 0.05,
            augment: true,
        }
    }

    pub fn desk_stage2() -> Self {
        Self {
            base_lr: 1e-4,
            weight_decay: 0.0,
            ..Self::desk_stage1()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(CodecError::Config("epochs and batch_size must be positive".into()));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(CodecError::Config(format!(
                "warmup_epochs {} must be below epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(self.base_lr > 0.0) || self.weight_decay < 0.0 {
            return Err(CodecError::Config("learning rate must be positive".into()));
        }
        Ok(())
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<bool> {
        let bad = || CodecError::Config(format!("{key}: cannot parse {value:?}"));
        match key {
            "epochs" => self.epochs = value.parse().map_err(|_| bad())?,
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad())?,
            "base_lr" | "lr" => self.base_lr = value.parse().map_err(|_| bad())?,
            "warmup_epochs" => self.warmup_epochs = value.parse().map_err(|_| bad())?,
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            "weight_decay" => self.weight_decay = value.parse().map_err(|_| bad())?,
            "augment" => self.augment = value.parse().map_err(|_| bad())?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Parsed `key=value` file. Blank lines and `#` comments are ignored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    pub entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CodecError::Config(format!("line {}: expected key=value", n + 1)))?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CodecError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Apply overrides onto a model and a training config. Unknown keys other
    /// than `profile`, `alpha` and `beta` are rejected.
    pub fn apply(&self, model: &mut ModelConfig, train: &mut TrainConfig) -> Result<()> {
        for (k, v) in &self.entries {
            if matches!(k.as_str(), "profile" | "alpha" | "beta") {
                continue;
            }
            if !model.apply(k, v)? && !train.apply(k, v)? {
                return Err(CodecError::Config(format!("unknown key {k:?}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_are_valid() {
        ModelConfig::desk().validate().unwrap();
        ModelConfig::paper().validate().unwrap();
        assert_eq!(ModelConfig::desk().latent_hw(), (4, 4));
        assert_eq!(ModelConfig::desk().hyper_hw(), (1, 1));
        assert_eq!(ModelConfig::paper().latent_hw(), (14, 14));
        assert_eq!(ModelConfig::paper().hyper_padding(), (1, 1, 1, 1));
        assert_eq!(ModelConfig::paper().hyper_hw(), (4, 4));
        assert_eq!(ModelConfig::desk().hyper_padding(), (0, 0, 0, 0));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = ModelConfig::desk();
        c.input_h = 72;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk();
        c.heads = 5;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk();
        c.embed_c = 90;
        c.heads = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk();
        c.depth_l = 2;
        assert!(c.validate().is_err());
    }

    #[test]
    fn digest_tracks_every_field() {
        let base = ModelConfig::desk().digest();
        let mut c = ModelConfig::desk();
        c.num_classes = 11;
        assert_ne!(base, c.digest());
        assert_eq!(base, ModelConfig::desk().digest());
    }

    #[test]
    fn config_file_overrides() {
        let f = ConfigFile::parse("# comment\nprofile=desk\nembed_c = 64\nepochs=3\nlr=0.01\n").unwrap();
        let mut m = ModelConfig::desk();
        let mut t = TrainConfig::desk_stage1();
        f.apply(&mut m, &mut t).unwrap();
        assert_eq!(m.embed_c, 64);
        assert_eq!(t.epochs, 3);
        assert_eq!(t.base_lr, 0.01);
        assert!(ConfigFile::parse("novalue").is_err());
        let f = ConfigFile::parse("bogus=1").unwrap();
        assert!(f.apply(&mut m, &mut t).is_err());
    }

    #[test]
    fn warmup_must_precede_end() {
        let mut t = TrainConfig::desk_stage1();
        t.epochs = 2;
        t.warmup_epochs = 2;
        assert!(t.validate().is_err());
    }
}
