//! Container format. All integers little-endian.
//!
//! ```text
//! "ECAT" | version u8 | config digest [8] | H u16 | W u16
//! | zmin i16 | zmax i16 | hmin i16 | hmax i16
//! | hyper_len u32 | hyper bytes | main bytes
//! ```

use crate::error::{CodecError, Result};

pub const MAGIC: &[u8; 4] = b"ECAT";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 4 + 1 + 8 + 2 + 2 + 4 * 2 + 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitstream {
    pub digest: [u8; 8],
    pub height: u16,
    pub width: u16,
    pub zmin: i16,
    pub zmax: i16,
    pub hmin: i16,
    pub hmax: i16,
    pub hyper: Vec<u8>,
    pub main: Vec<u8>,
}

impl Bitstream {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&self.digest);
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        for v in [self.zmin, self.zmax, self.hmin, self.hmax] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.hyper.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.hyper);
        out.extend_from_slice(&self.main);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(CodecError::Truncated("bitstream header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(CodecError::Header("bad magic".into()));
        }
        if bytes[4] != VERSION {
            return Err(CodecError::Header(format!("unsupported version {}", bytes[4])));
        }
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
        let i16_at = |o: usize| i16::from_le_bytes([bytes[o], bytes[o + 1]]);
        let mut digest = [0u8; 8];
        digest.copy_from_slice(&bytes[5..13]);
        let hyper_len = u32::from_le_bytes(bytes[25..29].try_into().expect("4 bytes")) as usize;
        let rest = &bytes[HEADER_LEN..];
        if rest.len() < hyper_len {
            return Err(CodecError::Truncated("hyper segment"));
        }
        let s = Self {
            digest,
            height: u16_at(13),
            width: u16_at(15),
            zmin: i16_at(17),
            zmax: i16_at(19),
            hmin: i16_at(21),
            hmax: i16_at(23),
            hyper: rest[..hyper_len].to_vec(),
            main: rest[hyper_len..].to_vec(),
        };
        if s.zmin > s.zmax || s.hmin > s.hmax {
            return Err(CodecError::Header("inverted alphabet bounds".into()));
        }
        Ok(s)
    }

    /// Total serialized size in bytes, header included.
    pub fn len(&self) -> usize {
        HEADER_LEN + self.hyper.len() + self.main.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Bits of entropy-coded payload, header excluded.
    pub fn payload_bits(&self) -> usize {
        8 * (self.hyper.len() + self.main.len())
    }

    /// Bits per pixel over the whole container.
    pub fn bpp(&self) -> f64 {
        bpp(self.len(), usize::from(self.height) * usize::from(self.width))
    }
}

pub fn bpp(bytes: usize, pixels: usize) -> f64 {
    (bytes * 8) as f64 / pixels as f64
}
