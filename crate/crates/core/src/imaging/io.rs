use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat};

use super::{Channels, ImagingError, RasterImage, Result};

/// Decodes a PNG. Grayscale inputs (with or without alpha, any bit depth)
/// become single-channel images; everything else is converted to 8-bit RGB.
pub fn decode_png(bytes: &[u8]) -> Result<RasterImage> {
    let decoded = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| ImagingError::Codec(e.to_string()))?;
    from_dynamic(decoded)
}

fn from_dynamic(decoded: DynamicImage) -> Result<RasterImage> {
    let (w, h) = (decoded.width(), decoded.height());
    if decoded.color().has_color() {
        RasterImage::new(w, h, Channels::Rgb, decoded.into_rgb8().into_raw())
    } else {
        RasterImage::new(w, h, Channels::Gray, decoded.into_luma8().into_raw())
    }
}

pub fn encode_png(img: &RasterImage) -> Result<Vec<u8>> {
    let color = match img.channels() {
        Channels::Gray => image::ExtendedColorType::L8,
        Channels::Rgb => image::ExtendedColorType::Rgb8,
    };
    let mut out = Cursor::new(Vec::new());
    image::write_buffer_with_format(
        &mut out,
        img.pixels(),
        img.width(),
        img.height(),
        color,
        ImageFormat::Png,
    )
    .map_err(|e| ImagingError::Codec(e.to_string()))?;
    Ok(out.into_inner())
}

pub fn load_png(path: impl AsRef<Path>) -> Result<RasterImage> {
    decode_png(&std::fs::read(path)?)
}

pub fn save_png(img: &RasterImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, encode_png(img)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_both_layouts() {
        for channels in [Channels::Gray, Channels::Rgb] {
            let img = RasterImage::from_fn(7, 3, channels, |x, y, c| (x * 37 + y * 11 + c as u32) as u8)
                .unwrap();
            let bytes = encode_png(&img).unwrap();
            assert_eq!(decode_png(&bytes).unwrap(), img);
        }
    }

    #[test]
    fn garbage_is_a_codec_error() {
        assert!(matches!(decode_png(b"not a png"), Err(ImagingError::Codec(_))));
    }
}
