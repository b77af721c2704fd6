use crate::error::{CodecError, Result};

/// Integer main latent and hyper-latent with their alphabet bounds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentPack {
    /// `[h, w, M]`, raster order.
    pub latent_shape: [usize; 3],
    pub z: Vec<i32>,
    /// `[h/4, w/4, N]`.
    pub hyper_shape: [usize; 3],
    pub h: Vec<i32>,
    pub zmin: i32,
    pub zmax: i32,
    pub hmin: i32,
    pub hmax: i32,
}

fn bounds(v: &[i32]) -> Result<(i32, i32)> {
    let min = *v.iter().min().ok_or(CodecError::EmptyAlphabet)?;
    let max = *v.iter().max().ok_or(CodecError::EmptyAlphabet)?;
    if min < i32::from(i16::MIN) || max > i32::from(i16::MAX) {
        return Err(CodecError::OutOfAlphabet {
            symbol: if min < i32::from(i16::MIN) { min } else { max },
            min: i32::from(i16::MIN),
            max: i32::from(i16::MAX),
        });
    }
    Ok((min, max))
}

impl LatentPack {
    /// Builds a pack with observed bounds.
    pub fn new(latent_shape: [usize; 3], z: Vec<i32>, hyper_shape: [usize; 3], h: Vec<i32>) -> Result<Self> {
        if z.len() != latent_shape.iter().product::<usize>() || h.len() != hyper_shape.iter().product::<usize>() {
            return Err(CodecError::Corrupt("pack data does not match its shape".into()));
        }
        let (zmin, zmax) = bounds(&z)?;
        let (hmin, hmax) = bounds(&h)?;
        Ok(Self { latent_shape, z, hyper_shape, h, zmin, zmax, hmin, hmax })
    }

    pub fn validate(&self) -> Result<()> {
        let check = |v: &[i32], min: i32, max: i32| match v.iter().find(|&&s| s < min || s > max) {
            Some(&symbol) => Err(CodecError::OutOfAlphabet { symbol, min, max }),
            None => Ok(()),
        };
        check(&self.z, self.zmin, self.zmax)?;
        check(&self.h, self.hmin, self.hmax)
    }

    pub fn z_f64(&self) -> Vec<f64> {
        self.z.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn h_f64(&self) -> Vec<f64> {
        self.h.iter().map(|&v| f64::from(v)).collect()
    }
}
