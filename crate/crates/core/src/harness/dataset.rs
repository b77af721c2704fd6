//! Labelled image sets, manifest ingestion, normalization statistics and
//! the desk augmentation.

use std::path::Path;

use rand::Rng;

use crate::error::{CodecError, Result};
use crate::harness::ppm::read_ppm;
use crate::image::Image;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(images: Vec<Image>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(CodecError::Dataset("image and label counts differ".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(CodecError::Dataset(format!("label {bad} out of range for {num_classes} classes")));
        }
        if let Some(first) = images.first() {
            if images.iter().any(|i| (i.width, i.height) != (first.width, first.height)) {
                return Err(CodecError::Dataset("images differ in size".into()));
            }
        }
        Ok(Self { images, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// First `n` records.
    pub fn take(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            images: self.images[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            num_classes: self.num_classes,
        }
    }

    /// Checks every image against the configured input size.
    pub fn check_size(&self, width: usize, height: usize) -> Result<()> {
        match self.images.iter().position(|i| (i.width, i.height) != (width, height)) {
            Some(k) => Err(CodecError::Dataset(format!(
                "image {k} is {}x{}, expected {width}x{height}",
                self.images[k].width, self.images[k].height
            ))),
            None => Ok(()),
        }
    }

    /// Per-channel mean and standard deviation in the `[0,1]` domain.
    pub fn channel_stats(&self) -> ([f64; 3], [f64; 3]) {
        let mut sum = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        let mut n = 0usize;
        for img in &self.images {
            for px in img.data.chunks_exact(3) {
                for c in 0..3 {
                    let v = f64::from(px[c]) / 255.0;
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
            n += img.pixels();
        }
        let n = n.max(1) as f64;
        let mean = sum.map(|s| s / n);
        let std = std::array::from_fn(|c| (sq[c] / n - mean[c] * mean[c]).max(1e-8).sqrt());
        (mean, std)
    }
}

/// Reads `path,label` rows (an optional `path,label` header is skipped) and
/// the referenced P6 files, relative to `dir`.
pub fn ingest(dir: &Path, manifest: &Path, num_classes: usize, size: Option<(usize, usize)>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(manifest)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => CodecError::io(manifest, io),
            other => CodecError::Dataset(format!("{other:?}")),
        })?;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CodecError::Dataset(format!("manifest row {}: {e}", row + 1)))?;
        if record.len() != 2 {
            return Err(CodecError::Dataset(format!("manifest row {}: expected path,label", row + 1)));
        }
        if row == 0 && &record[0] == "path" && &record[1] == "label" {
            continue;
        }
        let label: usize = record[1]
            .parse()
            .map_err(|_| CodecError::Dataset(format!("manifest row {}: bad label {:?}", row + 1, &record[1])))?;
        images.push(read_ppm(&dir.join(&record[0]))?);
        labels.push(label);
    }
    let data = Dataset::new(images, labels, num_classes)?;
    if let Some((w, h)) = size {
        data.check_size(w, h)?;
    }
    Ok(data)
}

/// Writes images as `NNNNN.ppm` plus `manifest.csv` into `dir`.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CodecError::io(dir, e))?;
    let manifest = dir.join("manifest.csv");
    let mut w = csv::Writer::from_path(&manifest).map_err(|e| CodecError::Dataset(e.to_string()))?;
    let io = |e: csv::Error| CodecError::Dataset(e.to_string());
    w.write_record(["path", "label"]).map_err(io)?;
    for (i, (img, label)) in data.images.iter().zip(&data.labels).enumerate() {
        let name = format!("{i:05}.ppm");
        crate::harness::ppm::write_ppm(&dir.join(&name), img)?;
        w.write_record([name, label.to_string()]).map_err(io)?;
    }
    w.flush().map_err(|e| CodecError::io(&manifest, e))
}

/// Random crop after edge-replicating `pad` pixels on each side, then a
/// horizontal flip with probability 1/2.
pub fn augment<R: Rng + ?Sized>(img: &Image, pad: usize, rng: &mut R) -> Image {
    let (w, h) = (img.width as isize, img.height as isize);
    let p = pad as i64;
    let dx = rng.random_range(-p..=p) as isize;
    let dy = rng.random_range(-p..=p) as isize;
    let flip = rng.random_bool(0.5);
    let mut data = Vec::with_capacity(img.data.len());
    for y in 0..h {
        let sy = (y + dy).clamp(0, h - 1);
        for x in 0..w {
            let xx = if flip { w - 1 - x } else { x };
            let sx = (xx + dx).clamp(0, w - 1);
            let o = ((sy * w + sx) * 3) as usize;
            data.extend_from_slice(&img.data[o..o + 3]);
        }
    }
    Image { width: img.width, height: img.height, data }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::ppm::write_ppm;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn img(v: u8) -> Image {
        Image::new(2, 2, vec![v; 12]).unwrap()
    }

    #[test]
    fn ingest_toy_manifest() {
        let dir = tempfile::tempdir().unwrap();
        write_ppm(&dir.path().join("a.ppm"), &img(10)).unwrap();
        write_ppm(&dir.path().join("b.ppm"), &img(20)).unwrap();
        let m = dir.path().join("m.csv");
        std::fs::write(&m, "path,label\na.ppm,3\nb.ppm,1\n").unwrap();
        let d = ingest(dir.path(), &m, 10, Some((2, 2))).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.labels, vec![3, 1]);
        assert_eq!(d.images[1], img(20));

        std::fs::write(&m, "a.ppm,3\nb.ppm,12\n").unwrap();
        assert!(ingest(dir.path(), &m, 10, None).is_err());
        std::fs::write(&m, "a.ppm,3\n").unwrap();
        assert!(ingest(dir.path(), &m, 10, Some((4, 4))).is_err());
        std::fs::write(&m, "missing.ppm,3\n").unwrap();
        assert!(ingest(dir.path(), &m, 10, None).unwrap_err().is_io());
    }

    #[test]
    fn write_then_ingest() {
        let dir = tempfile::tempdir().unwrap();
        let d = Dataset::new(vec![img(1), img(2), img(3)], vec![0, 1, 2], 3).unwrap();
        write_dataset(dir.path(), &d).unwrap();
        let back = ingest(dir.path(), &dir.path().join("manifest.csv"), 3, None).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn stats_of_constant_images() {
        let d = Dataset::new(vec![img(0), img(255)], vec![0, 0], 1).unwrap();
        let (mean, std) = d.channel_stats();
        for c in 0..3 {
            assert!((mean[c] - 0.5).abs() < 1e-12);
            assert!((std[c] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn augmentation_without_padding_only_flips() {
        let src = Image::new(2, 1, vec![1, 2, 3, 4, 5, 6]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let out = augment(&src, 0, &mut rng);
            assert!(out == src || out.data == vec![4, 5, 6, 1, 2, 3]);
        }
    }
}
