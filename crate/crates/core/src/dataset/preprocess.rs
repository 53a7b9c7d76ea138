use std::path::Path;

use image::{DynamicImage, RgbImage};

use crate::error::{Error, Result};

/// Height-width-channel float image. `data.len() == height * width * 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelTensor {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl PixelTensor {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, 3)
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// How non-RGB inputs are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ColorPolicy {
    RequireRgb,
    #[default]
    ConvertToRgb,
}

/// Bilinear resize with half-pixel centers and edge clamping, operating on
/// interleaved RGB floats.
pub fn resize_bilinear(
    src: &[f32],
    (src_h, src_w): (usize, usize),
    (dst_h, dst_w): (usize, usize),
) -> Vec<f32> {
    debug_assert_eq!(src.len(), src_h * src_w * 3);
    let scale_y = src_h as f64 / dst_h as f64;
    let scale_x = src_w as f64 / dst_w as f64;
    let sample = |d: usize, scale: f64, n: usize| -> (usize, usize, f32) {
        let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, (s - i0 as f64) as f32)
    };
    let cols: Vec<_> = (0..dst_w).map(|x| sample(x, scale_x, src_w)).collect();
    let mut out = Vec::with_capacity(dst_h * dst_w * 3);
    for y in 0..dst_h {
        let (y0, y1, fy) = sample(y, scale_y, src_h);
        for &(x0, x1, fx) in &cols {
            for c in 0..3 {
                let at = |yy: usize, xx: usize| src[(yy * src_w + xx) * 3 + c];
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    out
}

pub fn preprocess_rgb(
    image: &RgbImage,
    target_size: (usize, usize),
    rescale_factor: f64,
) -> Result<PixelTensor> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::InvalidArgument("image has zero area".into()));
    }
    if target_size.0 == 0 || target_size.1 == 0 {
        return Err(Error::InvalidArgument(format!(
            "target size must be positive, got {target_size:?}"
        )));
    }
    if !(rescale_factor.is_finite() && rescale_factor > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "rescale factor must be positive, got {rescale_factor}"
        )));
    }
    let raw: Vec<f32> = image.as_raw().iter().map(|&v| f32::from(v)).collect();
    let resized = if (h, w) == target_size {
        raw
    } else {
        resize_bilinear(&raw, (h, w), target_size)
    };
    let inv = (1.0 / rescale_factor) as f32;
    Ok(PixelTensor {
        height: target_size.0,
        width: target_size.1,
        data: resized.into_iter().map(|v| v * inv).collect(),
    })
}

/// Resizes to `target_size` (height, width) and divides by `rescale_factor`.
pub fn preprocess_image(
    image: &DynamicImage,
    target_size: (usize, usize),
    rescale_factor: f64,
    policy: ColorPolicy,
) -> Result<PixelTensor> {
    if image.width() == 0 || image.height() == 0 {
        return Err(Error::InvalidArgument("image has zero area".into()));
    }
    match (image, policy) {
        (DynamicImage::ImageRgb8(rgb), _) => preprocess_rgb(rgb, target_size, rescale_factor),
        (other, ColorPolicy::ConvertToRgb) => {
            preprocess_rgb(&other.to_rgb8(), target_size, rescale_factor)
        }
        (other, ColorPolicy::RequireRgb) => Err(Error::InvalidArgument(format!(
            "expected an RGB image, got {:?}; declare a color conversion",
            other.color()
        ))),
    }
}

/// Decodes an image file as RGB and preprocesses it.
pub fn load_preprocessed(
    path: &Path,
    target_size: (usize, usize),
    rescale_factor: f64,
) -> Result<PixelTensor> {
    preprocess_rgb(&super::augment::load_rgb(path)?, target_size, rescale_factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Rgb};

    #[test]
    fn downscale_stays_in_unit_range() {
        let img = RgbImage::from_fn(448, 448, |x, y| Rgb([(x % 256) as u8, (y % 256) as u8, 255]));
        let t = preprocess_rgb(&img, (224, 224), 255.0).unwrap();
        assert_eq!(t.shape(), (224, 224, 3));
        assert!(t.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn white_is_all_ones() {
        let img = RgbImage::from_pixel(224, 224, Rgb([255, 255, 255]));
        let t = preprocess_rgb(&img, (224, 224), 255.0).unwrap();
        assert!(t.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn two_by_two_upscale_matches_hand_computed_bilinear() {
        // Channel 0 holds [[0, 100], [200, 40]]. With half-pixel centers the
        // four output columns sample source x = 0, 0.25, 0.75, 1 (clamped),
        // and likewise for rows.
        let src = [[0.0f64, 100.0], [200.0, 40.0]];
        let mut img = RgbImage::new(2, 2);
        for y in 0..2 {
            for x in 0..2 {
                let v = src[y][x] as u8;
                img.put_pixel(x as u32, y as u32, Rgb([v, v, v]));
            }
        }
        let coords = [0.0, 0.25, 0.75, 1.0];
        let t = preprocess_rgb(&img, (4, 4), 1.0).unwrap();
        for (oy, &sy) in coords.iter().enumerate() {
            for (ox, &sx) in coords.iter().enumerate() {
                let top = src[0][0] * (1.0 - sx) + src[0][1] * sx;
                let bottom = src[1][0] * (1.0 - sx) + src[1][1] * sx;
                let expected = top * (1.0 - sy) + bottom * sy;
                let got = t.pixel(oy, ox)[0] as f64;
                assert!((got - expected).abs() < 1e-4, "({oy},{ox}) {got} vs {expected}");
            }
        }
        // Corner spot checks: (0,1) samples x = 0.25 on row 0.
        assert!((t.pixel(0, 1)[0] - 25.0).abs() < 1e-4);
        assert!((t.pixel(1, 1)[0] - 58.75).abs() < 1e-4);
    }

    #[test]
    fn zero_target_and_non_rgb_policy() {
        let img = RgbImage::from_pixel(4, 4, Rgb([1, 2, 3]));
        assert!(preprocess_rgb(&img, (0, 4), 255.0).is_err());
        let gray = DynamicImage::ImageLuma8(GrayImage::from_pixel(4, 4, image::Luma([9])));
        assert!(preprocess_image(&gray, (4, 4), 1.0, ColorPolicy::RequireRgb).is_err());
        let t = preprocess_image(&gray, (4, 4), 1.0, ColorPolicy::ConvertToRgb).unwrap();
        assert_eq!(t.pixel(2, 2), [9.0, 9.0, 9.0]);
    }
}
