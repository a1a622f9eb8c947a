//! 8-bit PNG for inspection and raw little-endian f32 images for numeric use.
//!
//! Raw files start with one JSON line `{"width":W,"height":H,"channels":C}`
//! followed by `W·H·C` f32 values, row-major and channel-interleaved.

use image::ImageEncoder as _;
use serde::{Deserialize, Serialize};

use super::error::{AssetError, AssetErrorKind, Location};
use super::json::from_json;
use crate::render::Image;

type Res<T> = std::result::Result<T, AssetError>;

fn image_err(e: image::ImageError) -> AssetError {
    AssetError::new(AssetErrorKind::Syntax, Location::Unknown, e.to_string())
}

/// Encodes with values clamped to `[0, 1]` and rounded to 8 bits.
pub fn encode_png(img: &Image) -> Res<Vec<u8>> {
    img.validate()?;
    let bytes: Vec<u8> = img
        .pixels
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let color = match img.channels {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        _ => image::ExtendedColorType::Rgba8,
    };
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(&bytes, img.width as u32, img.height as u32, color)
        .map_err(image_err)?;
    Ok(out)
}

/// Decodes to gray, RGB or RGBA with values in `[0, 1]`.
pub fn decode_png(bytes: &[u8]) -> Res<Image> {
    let dynimg = image::load_from_memory_with_format(bytes, image::ImageFormat::Png).map_err(image_err)?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let (channels, raw) = match dynimg.color().channel_count() {
        1 | 2 => (1, dynimg.into_luma8().into_raw()),
        3 => (3, dynimg.into_rgb8().into_raw()),
        _ => (4, dynimg.into_rgba8().into_raw()),
    };
    Ok(Image::from_pixels(
        w,
        h,
        channels,
        raw.into_iter().map(|b| b as f32 / 255.0).collect(),
    )?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHeader {
    width: usize,
    height: usize,
    channels: usize,
}

pub fn encode_raw(img: &Image) -> Res<Vec<u8>> {
    img.validate()?;
    let header = RawHeader {
        width: img.width,
        height: img.height,
        channels: img.channels,
    };
    let mut out = serde_json::to_vec(&header).expect("plain struct");
    out.push(b'\n');
    for v in &img.pixels {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_raw(bytes: &[u8]) -> Res<Image> {
    let nl = bytes
        .iter()
        .take(4096)
        .position(|b| *b == b'\n')
        .ok_or_else(|| AssetError::bounds_at(bytes.len().min(4096), "missing header line"))?;
    let text = std::str::from_utf8(&bytes[..nl]).map_err(|_| AssetError::syntax_at_line(1, "header is not UTF-8"))?;
    let h: RawHeader = from_json(text)?;
    let body = &bytes[nl + 1..];
    let expected = h
        .width
        .checked_mul(h.height)
        .and_then(|n| n.checked_mul(h.channels))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| AssetError::invariant("image dimensions overflow"))?;
    if body.len() != expected {
        return Err(AssetError::bounds_at(
            nl + 1 + body.len().min(expected),
            format!("expected {expected} payload bytes, found {}", body.len()),
        ));
    }
    let pixels = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(Image::from_pixels(h.width, h.height, h.channels, pixels)?)
}
