use serde::{Deserialize, Serialize};

use super::{ImagingError, PixelRegion, RasterImage, Result};

/// Lossless geometric transforms. Rotations are clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometricOp {
    Rot90,
    Rot180,
    Rot270,
    FlipH,
    FlipV,
}

impl GeometricOp {
    pub const ALL: [GeometricOp; 5] = [
        GeometricOp::Rot90,
        GeometricOp::Rot180,
        GeometricOp::Rot270,
        GeometricOp::FlipH,
        GeometricOp::FlipV,
    ];
}

pub fn transform_geometric(img: &RasterImage, op: GeometricOp) -> RasterImage {
    let (w, h) = (img.width(), img.height());
    let (out_w, out_h) = match op {
        GeometricOp::Rot90 | GeometricOp::Rot270 => (h, w),
        _ => (w, h),
    };
    // Maps an output (row, col) to its source (row, col).
    let source = |r: u32, c: u32| -> (u32, u32) {
        match op {
            GeometricOp::Rot90 => (h - 1 - c, r),
            GeometricOp::Rot180 => (h - 1 - r, w - 1 - c),
            GeometricOp::Rot270 => (c, w - 1 - r),
            GeometricOp::FlipH => (r, w - 1 - c),
            GeometricOp::FlipV => (h - 1 - r, c),
        }
    };
    let ch = img.channel_count();
    let mut out = Vec::with_capacity(img.pixels().len());
    for r in 0..out_h {
        for c in 0..out_w {
            let (sr, sc) = source(r, c);
            let i = img.index(sc, sr, 0);
            out.extend_from_slice(&img.pixels()[i..i + ch]);
        }
    }
    RasterImage::new(out_w, out_h, img.channels(), out).expect("geometric transform preserves sample count")
}

pub fn crop(img: &RasterImage, region: PixelRegion) -> Result<RasterImage> {
    if !region.fits(img.width(), img.height()) {
        return Err(ImagingError::RegionOutOfBounds {
            region,
            width: img.width(),
            height: img.height(),
        });
    }
    let ch = img.channel_count();
    let mut out = Vec::with_capacity(region.w as usize * region.h as usize * ch);
    for y in region.y..region.y + region.h {
        let start = img.index(region.x, y, 0);
        out.extend_from_slice(&img.pixels()[start..start + region.w as usize * ch]);
    }
    RasterImage::new(region.w, region.h, img.channels(), out)
}
