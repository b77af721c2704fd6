use crate::image::Image;

/// PSNR cap for identical images.
pub const PSNR_CAP: f64 = 100.0;

pub fn mse(a: &Image, b: &Image) -> f64 {
    assert_eq!(a.data.len(), b.data.len(), "psnr on images of different size");
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum();
    sum / a.data.len() as f64
}

/// `10 log10(255^2 / MSE)` over 8-bit pixels, capped at 100 dB.
pub fn psnr(a: &Image, b: &Image) -> f64 {
    let m = mse(a, b);
    if m == 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (255.0f64 * 255.0 / m).log10()).min(PSNR_CAP)
}
