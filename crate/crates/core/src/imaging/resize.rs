use super::{quantize, ImagingError, RasterImage, Result};

#[derive(Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

/// Source taps for one axis using half-pixel centers:
/// `src = (dst + 0.5) * (in / out) - 0.5`, clamped to the valid range.
fn axis_taps(input: u32, output: u32) -> Vec<Tap> {
    let scale = f64::from(input) / f64::from(output);
    let last = f64::from(input - 1);
    (0..output)
        .map(|d| {
            let src = ((f64::from(d) + 0.5) * scale - 0.5).clamp(0.0, last);
            let lo = src.floor();
            let frac = src - lo;
            let lo = lo as usize;
            let hi = (lo + 1).min(input as usize - 1);
            Tap { lo, hi, frac }
        })
        .collect()
}

/// Bilinear resize with half-pixel-centered sampling.
pub fn resize_bilinear(img: &RasterImage, out_w: u32, out_h: u32) -> Result<RasterImage> {
    if out_w == 0 || out_h == 0 {
        return Err(ImagingError::InvalidParameter(format!(
            "resize target must be at least 1x1, got {out_w}x{out_h}"
        )));
    }
    if out_w == img.width() && out_h == img.height() {
        return Ok(img.clone());
    }
    let xs = axis_taps(img.width(), out_w);
    let ys = axis_taps(img.height(), out_h);
    let ch = img.channel_count();
    let stride = img.width() as usize * ch;
    let src = img.pixels();

    let mut out = Vec::with_capacity(out_w as usize * out_h as usize * ch);
    for ty in &ys {
        let row0 = &src[ty.lo * stride..(ty.lo + 1) * stride];
        let row1 = &src[ty.hi * stride..(ty.hi + 1) * stride];
        for tx in &xs {
            for c in 0..ch {
                let p00 = f64::from(row0[tx.lo * ch + c]);
                let p01 = f64::from(row0[tx.hi * ch + c]);
                let p10 = f64::from(row1[tx.lo * ch + c]);
                let p11 = f64::from(row1[tx.hi * ch + c]);
                let top = p00 + (p01 - p00) * tx.frac;
                let bottom = p10 + (p11 - p10) * tx.frac;
                out.push(quantize(top + (bottom - top) * ty.frac));
            }
        }
    }
    RasterImage::new(out_w, out_h, img.channels(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Channels;

    #[test]
    fn constant_survives_downscale() {
        let img = RasterImage::filled(1600, 1600, Channels::Rgb, 200).unwrap();
        let out = resize_bilinear(&img, 1024, 1024).unwrap();
        assert_eq!((out.width(), out.height()), (1024, 1024));
        assert!(out.pixels().iter().all(|&v| v == 200));
    }

    #[test]
    fn same_size_is_identity() {
        let img = RasterImage::from_fn(5, 3, Channels::Rgb, |x, y, c| (x * 31 + y * 17 + c as u32 * 5) as u8)
            .unwrap();
        assert_eq!(resize_bilinear(&img, 5, 3).unwrap(), img);
    }

    #[test]
    fn zero_target_rejected() {
        let img = RasterImage::filled(2, 2, Channels::Gray, 0).unwrap();
        assert!(resize_bilinear(&img, 0, 2).is_err());
        assert!(resize_bilinear(&img, 2, 0).is_err());
    }

    #[test]
    fn upscale_single_pixel() {
        let img = RasterImage::new(1, 1, Channels::Gray, vec![42]).unwrap();
        let out = resize_bilinear(&img, 3, 2).unwrap();
        assert_eq!(out.pixels(), &[42; 6]);
    }
}
