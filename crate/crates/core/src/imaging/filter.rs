use super::{quantize, ImagingError, RasterImage, Result};

/// Normalized 1-D Gaussian weights over `[-r, r]` with `r = ceil(3 * sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(ImagingError::InvalidParameter(format!(
            "gaussian sigma must be positive and finite, got {sigma}"
        )));
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let denom = 2.0 * sigma * sigma;
    let mut weights: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / denom).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Ok(weights)
}

/// Separable Gaussian blur with clamp-to-edge borders.
///
/// Returns unrounded samples in the image's interleaved layout so callers can
/// combine them with the source before quantizing.
pub fn gaussian_blur(img: &RasterImage, sigma: f64) -> Result<Vec<f64>> {
    let kernel = gaussian_kernel(sigma)?;
    let radius = (kernel.len() / 2) as i64;
    let (w, h, ch) = (
        img.width() as i64,
        img.height() as i64,
        img.channel_count(),
    );
    let src = img.pixels();
    let at = |x: i64, y: i64, c: usize| (y as usize * w as usize + x as usize) * ch + c;

    let mut horizontal = vec![0.0f64; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (k, weight) in kernel.iter().enumerate() {
                    let sx = (x + k as i64 - radius).clamp(0, w - 1);
                    acc += weight * f64::from(src[at(sx, y, c)]);
                }
                horizontal[at(x, y, c)] = acc;
            }
        }
    }

    let mut out = vec![0.0f64; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (k, weight) in kernel.iter().enumerate() {
                    let sy = (y + k as i64 - radius).clamp(0, h - 1);
                    acc += weight * horizontal[at(x, sy, c)];
                }
                out[at(x, y, c)] = acc;
            }
        }
    }
    Ok(out)
}

/// Unsharp masking: `in + amount * (in - blur_sigma(in))`.
pub fn unsharp_mask(img: &RasterImage, sigma: f64, amount: f64) -> Result<RasterImage> {
    if !(amount >= 0.0 && amount.is_finite()) {
        return Err(ImagingError::InvalidParameter(format!(
            "unsharp amount must be non-negative and finite, got {amount}"
        )));
    }
    sharpen(img, sigma, amount)
}

/// Like [`unsharp_mask`] but also accepts negative amounts, which blend the
/// image toward its blur (`amount = -1` is the blur itself).
pub(crate) fn sharpen(img: &RasterImage, sigma: f64, amount: f64) -> Result<RasterImage> {
    let blurred = gaussian_blur(img, sigma)?;
    if amount == 0.0 {
        return Ok(img.clone());
    }
    let pixels = img
        .pixels()
        .iter()
        .zip(&blurred)
        .map(|(&v, &b)| {
            let v = f64::from(v);
            quantize(v + amount * (v - b))
        })
        .collect();
    Ok(img.with_pixels(pixels))
}

/// 3x3 median filter per channel with clamp-to-edge borders.
pub fn denoise(img: &RasterImage) -> RasterImage {
    let (w, h, ch) = (
        img.width() as i64,
        img.height() as i64,
        img.channel_count(),
    );
    let src = img.pixels();
    let mut out = vec![0u8; src.len()];
    let mut window = [0u8; 9];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut n = 0;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let sx = (x + dx).clamp(0, w - 1) as usize;
                        let sy = (y + dy).clamp(0, h - 1) as usize;
                        window[n] = src[(sy * w as usize + sx) * ch + c];
                        n += 1;
                    }
                }
                window.sort_unstable();
                out[(y as usize * w as usize + x as usize) * ch + c] = window[4];
            }
        }
    }
    img.with_pixels(out)
}
