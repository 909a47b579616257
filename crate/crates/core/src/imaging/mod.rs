//! Pixel-exact raster images and the transforms used by preprocessing and
//! augmentation.
//!
//! Every transform is a pure function returning a new [`RasterImage`].
//! Arithmetic runs in `f64`; results are rounded half away from zero and then
//! clamped to `[0, 255]`.

mod adjust;
mod filter;
mod geometry;
mod io;
mod resize;

pub use adjust::{add_noise, adjust, Adjustment, ADJUST_RANGE};
pub use filter::{denoise, gaussian_blur, gaussian_kernel, unsharp_mask};
pub use geometry::{crop, transform_geometric, GeometricOp};
pub use io::{decode_png, encode_png, load_png, save_png};
pub use resize::resize_bilinear;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("image dimensions must be at least 1x1, got {width}x{height}")]
    EmptyDimensions { width: u32, height: u32 },
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    UnsupportedChannels(u8),
    #[error("pixel buffer holds {actual} samples, expected {expected}")]
    BufferLength { expected: usize, actual: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("region {region:?} exceeds image bounds {width}x{height}")]
    RegionOutOfBounds { region: PixelRegion, width: u32, height: u32 },
    #[error("png codec error: {0}")]
    Codec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ImagingError> = std::result::Result<T, E>;

/// Interleaved channel layout of a [`RasterImage`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channels {
    Gray,
    Rgb,
}

impl Channels {
    pub fn count(self) -> usize {
        match self {
            Channels::Gray => 1,
            Channels::Rgb => 3,
        }
    }

    pub fn from_count(count: u8) -> Result<Self> {
        match count {
            1 => Ok(Channels::Gray),
            3 => Ok(Channels::Rgb),
            other => Err(ImagingError::UnsupportedChannels(other)),
        }
    }
}

/// Row-major, channel-interleaved 8-bit image.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct RasterImage {
    width: u32,
    height: u32,
    channels: Channels,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RasterImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl RasterImage {
    pub fn new(width: u32, height: u32, channels: Channels, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(ImagingError::EmptyDimensions { width, height });
        }
        let expected = width as usize * height as usize * channels.count();
        if pixels.len() != expected {
            return Err(ImagingError::BufferLength {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    /// Image where every sample equals `value`.
    pub fn filled(width: u32, height: u32, channels: Channels, value: u8) -> Result<Self> {
        let len = width as usize * height as usize * channels.count();
        Self::new(width, height, channels, vec![value; len])
    }

    /// Builds an image by evaluating `f(x, y, channel)` for every sample.
    pub fn from_fn(
        width: u32,
        height: u32,
        channels: Channels,
        mut f: impl FnMut(u32, u32, usize) -> u8,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width as usize * height as usize * channels.count());
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels.count() {
                    pixels.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> Channels {
        self.channels
    }

    pub fn channel_count(&self) -> usize {
        self.channels.count()
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32, c: usize) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels.count() + c
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32, c: usize) -> u8 {
        self.pixels[self.index(x, y, c)]
    }

    /// Same shape, new samples. Used by transforms that keep geometry.
    pub(crate) fn with_pixels(&self, pixels: Vec<u8>) -> Self {
        debug_assert_eq!(pixels.len(), self.pixels.len());
        Self {
            width: self.width,
            height: self.height,
            channels: self.channels,
            pixels,
        }
    }
}

/// Image samples scaled to `[0, 1]`, same layout as [`RasterImage`].
#[derive(Clone, PartialEq)]
pub struct NormalizedTensor {
    width: u32,
    height: u32,
    channels: Channels,
    values: Vec<f32>,
}

impl std::fmt::Debug for NormalizedTensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NormalizedTensor")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl NormalizedTensor {
    pub fn new(width: u32, height: u32, channels: Channels, values: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(ImagingError::EmptyDimensions { width, height });
        }
        let expected = width as usize * height as usize * channels.count();
        if values.len() != expected {
            return Err(ImagingError::BufferLength {
                expected,
                actual: values.len(),
            });
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ImagingError::InvalidParameter(format!(
                "normalized sample {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            values,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> Channels {
        self.channels
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32, c: usize) -> f32 {
        self.values[(y as usize * self.width as usize + x as usize) * self.channels.count() + c]
    }
}

/// Scales every sample by 1/255.
pub fn normalize(img: &RasterImage) -> NormalizedTensor {
    NormalizedTensor {
        width: img.width,
        height: img.height,
        channels: img.channels,
        values: img.pixels.iter().map(|&v| f32::from(v) / 255.0).collect(),
    }
}

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRegion {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl PixelRegion {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.w >= 1
            && self.h >= 1
            && u64::from(self.x) + u64::from(self.w) <= u64::from(width)
            && u64::from(self.y) + u64::from(self.h) <= u64::from(height)
    }
}

/// Rounds half away from zero and saturates to the 8-bit range.
#[inline]
pub(crate) fn quantize(value: f64) -> u8 {
    let r = value.round();
    if r <= 0.0 {
        0
    } else if r >= 255.0 {
        255
    } else {
        r as u8
    }
}
