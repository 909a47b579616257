use std::ops::RangeInclusive;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::filter::sharpen;
use super::{quantize, Channels, ImagingError, RasterImage, Result};

/// Accepted `delta` values for [`adjust`].
pub const ADJUST_RANGE: RangeInclusive<i32> = -20..=20;

/// Photometric adjustment families.
///
/// * brightness: `in + delta`
/// * contrast: `(in - 128) * (1 + delta/100) + 128`
/// * saturation: `luma + (in - luma) * (1 + delta/100)`, Rec.601 luma
/// * sharpness: unsharp mask with `sigma = 1`, `amount = delta/20`; negative
///   deltas blend toward the blur
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Adjustment {
    Brightness,
    Contrast,
    Saturation,
    Sharpness,
}

impl Adjustment {
    pub const ALL: [Adjustment; 4] = [
        Adjustment::Brightness,
        Adjustment::Contrast,
        Adjustment::Saturation,
        Adjustment::Sharpness,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Adjustment::Brightness => "brightness",
            Adjustment::Contrast => "contrast",
            Adjustment::Saturation => "saturation",
            Adjustment::Sharpness => "sharpness",
        }
    }
}

pub fn adjust(img: &RasterImage, kind: Adjustment, delta: i32) -> Result<RasterImage> {
    if !ADJUST_RANGE.contains(&delta) {
        return Err(ImagingError::InvalidParameter(format!(
            "{} delta {delta} outside [-20, 20]",
            kind.name()
        )));
    }
    let gain = 1.0 + f64::from(delta) / 100.0;
    match kind {
        Adjustment::Brightness => {
            let d = f64::from(delta);
            Ok(map_samples(img, |v| quantize(f64::from(v) + d)))
        }
        Adjustment::Contrast => Ok(map_samples(img, |v| {
            quantize((f64::from(v) - 128.0) * gain + 128.0)
        })),
        Adjustment::Saturation => {
            if img.channels() != Channels::Rgb {
                return Err(ImagingError::InvalidParameter(
                    "saturation requires a 3-channel image".into(),
                ));
            }
            let mut out = Vec::with_capacity(img.pixels().len());
            for px in img.pixels().chunks_exact(3) {
                let (r, g, b) = (f64::from(px[0]), f64::from(px[1]), f64::from(px[2]));
                let luma = 0.299 * r + 0.587 * g + 0.114 * b;
                for v in [r, g, b] {
                    out.push(quantize(luma + (v - luma) * gain));
                }
            }
            Ok(img.with_pixels(out))
        }
        Adjustment::Sharpness => sharpen(img, 1.0, f64::from(delta) / 20.0),
    }
}

fn map_samples(img: &RasterImage, mut f: impl FnMut(u8) -> u8) -> RasterImage {
    img.with_pixels(img.pixels().iter().map(|&v| f(v)).collect())
}

/// Adds `N(0, sigma)` noise to every sample.
///
/// Noise is drawn in buffer order from ChaCha8 (`rand_chacha::ChaCha8Rng`)
/// seeded with `seed` via `SeedableRng::seed_from_u64`, so a given
/// `(img, sigma, seed)` always yields the same bytes.
pub fn add_noise(img: &RasterImage, sigma: f64, seed: u64) -> Result<RasterImage> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(ImagingError::InvalidParameter(format!(
            "noise sigma must be non-negative and finite, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| ImagingError::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(map_samples(img, |v| {
        quantize(f64::from(v) + normal.sample(&mut rng))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> RasterImage {
        RasterImage::from_fn(8, 8, Channels::Rgb, |x, y, c| (x * 29 + y * 3 + c as u32 * 50) as u8)
            .unwrap()
    }

    #[test]
    fn brightness_clamps() {
        let img = RasterImage::new(1, 1, Channels::Gray, vec![250]).unwrap();
        assert_eq!(adjust(&img, Adjustment::Brightness, 20).unwrap().pixels(), &[255]);
    }

    #[test]
    fn contrast_fixes_mid_gray() {
        let img = RasterImage::new(1, 1, Channels::Gray, vec![128]).unwrap();
        for d in ADJUST_RANGE {
            assert_eq!(adjust(&img, Adjustment::Contrast, d).unwrap().pixels(), &[128]);
        }
    }

    #[test]
    fn saturation_keeps_gray() {
        let img = RasterImage::new(1, 1, Channels::Rgb, vec![90, 90, 90]).unwrap();
        assert_eq!(
            adjust(&img, Adjustment::Saturation, 20).unwrap().pixels(),
            &[90, 90, 90]
        );
    }

    #[test]
    fn saturation_needs_color() {
        let img = RasterImage::filled(2, 2, Channels::Gray, 10).unwrap();
        assert!(adjust(&img, Adjustment::Saturation, 5).is_err());
    }

    #[test]
    fn out_of_range_delta() {
        let img = ramp();
        assert!(adjust(&img, Adjustment::Brightness, 21).is_err());
        assert!(adjust(&img, Adjustment::Contrast, -21).is_err());
    }

    #[test]
    fn zero_delta_is_identity() {
        let img = ramp();
        for kind in Adjustment::ALL {
            assert_eq!(adjust(&img, kind, 0).unwrap(), img, "{kind:?}");
        }
    }

    #[test]
    fn full_negative_sharpness_is_the_blur() {
        let img = ramp();
        let blurred = crate::imaging::gaussian_blur(&img, 1.0).unwrap();
        let expected: Vec<u8> = blurred.iter().map(|&b| quantize(b)).collect();
        assert_eq!(adjust(&img, Adjustment::Sharpness, -20).unwrap().pixels(), &expected[..]);
    }

    #[test]
    fn noise_is_seeded() {
        let img = ramp();
        let a = add_noise(&img, 6.0, 99).unwrap();
        let b = add_noise(&img, 6.0, 99).unwrap();
        let c = add_noise(&img, 6.0, 100).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(add_noise(&img, 0.0, 5).unwrap(), img);
        assert!(add_noise(&img, -1.0, 5).is_err());
    }
}
