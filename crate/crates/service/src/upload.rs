use image::{ImageFormat, RgbImage};

use crate::error::{codes, ApiError};
use axum::http::StatusCode;

/// Width and height declared in a PNG or baseline/progressive JPEG header,
/// read without decoding pixels.
pub fn declared_dimensions(bytes: &[u8]) -> Option<(u32, u32)> {
    const PNG_SIGNATURE: &[u8] = &[0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];
    if bytes.starts_with(PNG_SIGNATURE) {
        if bytes.len() < 24 || &bytes[12..16] != b"IHDR" {
            return None;
        }
        let w = u32::from_be_bytes(bytes[16..20].try_into().ok()?);
        let h = u32::from_be_bytes(bytes[20..24].try_into().ok()?);
        return Some((w, h));
    }
    if bytes.starts_with(&[0xff, 0xd8]) {
        let mut i = 2;
        while i + 4 <= bytes.len() {
            if bytes[i] != 0xff {
                return None;
            }
            let marker = bytes[i + 1];
            if marker == 0xff {
                i += 1;
                continue;
            }
            let len = usize::from(u16::from_be_bytes([bytes[i + 2], bytes[i + 3]]));
            let is_sof = matches!(marker, 0xc0..=0xcf) && !matches!(marker, 0xc4 | 0xc8 | 0xcc);
            if is_sof {
                if i + 9 > bytes.len() {
                    return None;
                }
                let h = u32::from(u16::from_be_bytes([bytes[i + 5], bytes[i + 6]]));
                let w = u32::from(u16::from_be_bytes([bytes[i + 7], bytes[i + 8]]));
                return Some((w, h));
            }
            i += 2 + len;
        }
    }
    None
}

/// Decodes an uploaded JPEG or PNG to RGB.
pub fn decode_upload(bytes: &[u8]) -> Result<(RgbImage, ImageFormat), ApiError> {
    if matches!(declared_dimensions(bytes), Some((w, h)) if w == 0 || h == 0) {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            codes::ZERO_AREA_IMAGE,
            "image has zero width or height",
        ));
    }
    let format = image::guess_format(bytes).map_err(|_| {
        ApiError::bad_request(codes::UNDECODABLE_IMAGE, "upload is not a recognizable image")
    })?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Jpeg) {
        return Err(ApiError::bad_request(
            codes::UNDECODABLE_IMAGE,
            format!("unsupported image format {format:?}; send JPEG or PNG"),
        ));
    }
    let img = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| ApiError::bad_request(codes::UNDECODABLE_IMAGE, format!("cannot decode image: {e}")))?;
    if img.width() == 0 || img.height() == 0 {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            codes::ZERO_AREA_IMAGE,
            "image has zero width or height",
        ));
    }
    Ok((img.to_rgb8(), format))
}
