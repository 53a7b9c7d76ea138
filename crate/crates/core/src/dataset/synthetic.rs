//! Generated stand-in corpora for smoke tests and desk-scale runs.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::util;

const PALETTE: [[u8; 3]; 5] = [
    [200, 30, 45],
    [235, 235, 225],
    [240, 195, 40],
    [235, 115, 170],
    [110, 30, 120],
];

fn class_color(class: usize) -> [u8; 3] {
    if class < PALETTE.len() {
        return PALETTE[class];
    }
    let hue = (class as f64 * 0.618_033_988_75).fract() * 6.0;
    let x = 1.0 - (hue % 2.0 - 1.0).abs();
    let (r, g, b) = match hue as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [(r * 230.0) as u8 + 20, (g * 230.0) as u8 + 20, (b * 230.0) as u8 + 20]
}

fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Dataset(format!("cannot encode {}: {other}", path.display())),
        })
}

/// Writes `counts[c]` distinct `size`×`size` PNGs under `<root>/<names[c]>/`.
/// Content is a cheap per-file pattern; only file counts matter to callers.
pub fn write_placeholder_corpus(
    root: &Path,
    names: &[&str],
    counts: &[usize],
    size: u32,
) -> Result<()> {
    assert_eq!(names.len(), counts.len(), "one count per class");
    for (c, (name, &n)) in names.iter().zip(counts).enumerate() {
        let dir = root.join(name);
        util::create_dir_all(&dir)?;
        for i in 0..n {
            let seed = (c * 100_003 + i) as u32;
            let img = RgbImage::from_fn(size, size, |x, y| {
                let v = seed.wrapping_mul(2_654_435_761) ^ (x * 31 + y * 17);
                Rgb([(v & 0xff) as u8, ((v >> 8) & 0xff) as u8, ((x * 255) / size.max(1)) as u8])
            });
            save_png(&img, &dir.join(format!("img_{i:04}.png")))?;
        }
    }
    Ok(())
}

fn inside_shape(kind: usize, dx: f64, dy: f64, r: f64) -> bool {
    match kind % 5 {
        0 => dx * dx + dy * dy <= r * r,
        1 => dx.abs() <= r * 0.85 && dy.abs() <= r * 0.85,
        2 => dy <= r * 0.7 && dy >= -r && dx.abs() <= (dy + r) * 0.6,
        3 => dx.abs() + dy.abs() <= r,
        _ => {
            let d2 = dx * dx + dy * dy;
            d2 <= r * r && d2 >= (r * 0.5) * (r * 0.5)
        }
    }
}

/// Renders one noisy colored shape on a foliage-like background.
pub fn render_shape_image<R: Rng>(class: usize, size: u32, rng: &mut R) -> RgbImage {
    let s = f64::from(size);
    let r = rng.random_range(0.22..0.36) * s;
    let cx = rng.random_range(r..(s - r).max(r + 1.0));
    let cy = rng.random_range(r..(s - r).max(r + 1.0));
    let base = class_color(class);
    let jitter: [i32; 3] = [
        rng.random_range(-15..=15),
        rng.random_range(-15..=15),
        rng.random_range(-15..=15),
    ];
    let color = [0, 1, 2].map(|i| (i32::from(base[i]) + jitter[i]).clamp(0, 255) as u8);
    let mut img = RgbImage::new(size, size);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let dx = f64::from(x) + 0.5 - cx;
        let dy = f64::from(y) + 0.5 - cy;
        *px = if inside_shape(class, dx, dy, r) {
            let n: i32 = rng.random_range(-8..=8);
            Rgb(color.map(|v| (i32::from(v) + n).clamp(0, 255) as u8))
        } else {
            Rgb([
                rng.random_range(20..60),
                rng.random_range(60..110),
                rng.random_range(20..50),
            ])
        };
    }
    img
}

/// Writes a class-per-folder corpus of colored shapes, one color and shape
/// per class, `per_class` images each.
pub fn write_shape_corpus(
    root: &Path,
    names: &[&str],
    per_class: usize,
    size: u32,
    seed: u64,
) -> Result<()> {
    for (c, name) in names.iter().enumerate() {
        let dir = root.join(name);
        util::create_dir_all(&dir)?;
        let mut rng = ChaCha8Rng::seed_from_u64(util::derive_seed(seed, name));
        for i in 0..per_class {
            let img = render_shape_image(c, size, &mut rng);
            save_png(&img, &dir.join(format!("img_{i:04}.png")))?;
        }
    }
    Ok(())
}
