//! Minimal raster charts written as PNG: line charts, ROC plots and
//! annotated confusion heatmaps. Text uses the 8x8 public-domain bitmap
//! font, so rendered annotations are pixel-exact and machine-readable.

use std::path::Path;

use font8x8::{UnicodeFonts, BASIC_FONTS};
use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

pub const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
pub const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const BACKGROUND: Rgb<u8> = Rgb([252, 252, 250]);
const AXIS: Rgb<u8> = Rgb([60, 60, 60]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);

pub const SERIES_COLORS: [Rgb<u8>; 6] = [
    Rgb([31, 119, 180]),
    Rgb([255, 127, 14]),
    Rgb([44, 160, 44]),
    Rgb([214, 39, 40]),
    Rgb([148, 103, 189]),
    Rgb([140, 86, 75]),
];

/// Glyph cell size in pixels at scale 1.
pub const GLYPH: u32 = 8;

pub struct Canvas {
    pub img: RgbImage,
}

impl Canvas {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            img: RgbImage::from_pixel(width, height, BACKGROUND),
        }
    }

    fn put(&mut self, x: i64, y: i64, color: Rgb<u8>) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img.put_pixel(x as u32, y as u32, color);
        }
    }

    pub fn fill_rect(&mut self, x: u32, y: u32, w: u32, h: u32, color: Rgb<u8>) {
        for yy in y..y + h {
            for xx in x..x + w {
                self.put(i64::from(xx), i64::from(yy), color);
            }
        }
    }

    pub fn line(&mut self, (x0, y0): (f64, f64), (x1, y1): (f64, f64), color: Rgb<u8>, thick: bool) {
        let (mut x, mut y) = (x0.round() as i64, y0.round() as i64);
        let (xe, ye) = (x1.round() as i64, y1.round() as i64);
        let dx = (xe - x).abs();
        let dy = -(ye - y).abs();
        let sx = if x < xe { 1 } else { -1 };
        let sy = if y < ye { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            self.put(x, y, color);
            if thick {
                self.put(x + 1, y, color);
                self.put(x, y + 1, color);
            }
            if x == xe && y == ye {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    /// Draws `text` with its top-left corner at `(x, y)`; each glyph covers
    /// `8 * scale` pixels square. Characters outside the font are skipped.
    pub fn text(&mut self, x: i64, y: i64, text: &str, scale: u32, color: Rgb<u8>) {
        let step = i64::from(GLYPH * scale);
        for (i, ch) in text.chars().enumerate() {
            let Some(rows) = BASIC_FONTS.get(ch) else {
                continue;
            };
            let gx = x + i as i64 * step;
            for (ry, bits) in rows.iter().enumerate() {
                for rx in 0..8 {
                    if bits & (1 << rx) != 0 {
                        for sy in 0..scale {
                            for sx in 0..scale {
                                self.put(
                                    gx + i64::from(rx * scale + sx),
                                    y + (ry as i64) * i64::from(scale) + i64::from(sy),
                                    color,
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn text_width(text: &str, scale: u32) -> i64 {
        text.chars().count() as i64 * i64::from(GLYPH * scale)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        self.img
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| match e {
                image::ImageError::IoError(io) => Error::io(path, io),
                other => Error::Model(format!("cannot encode {}: {other}", path.display())),
            })
    }
}

pub struct Series<'a> {
    pub name: &'a str,
    pub points: Vec<(f64, f64)>,
}

const PLOT_W: u32 = 640;
const PLOT_H: u32 = 440;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

fn format_tick(v: f64) -> String {
    if v.abs() >= 100.0 || (v.fract() == 0.0 && v.abs() < 1e6) {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.2}")
    }
}

/// XY chart with light grid, axis ticks and a legend.
pub fn xy_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series<'_>],
    x_range: (f64, f64),
    y_range: (f64, f64),
    diagonal: bool,
) -> Canvas {
    let mut c = Canvas::new(PLOT_W, PLOT_H);
    let pw = f64::from(PLOT_W) - LEFT - RIGHT;
    let ph = f64::from(PLOT_H) - TOP - BOTTOM;
    let (x0, x1) = if x_range.1 > x_range.0 { x_range } else { (x_range.0, x_range.0 + 1.0) };
    let (y0, y1) = if y_range.1 > y_range.0 { y_range } else { (y_range.0 - 0.5, y_range.0 + 0.5) };
    let to_px = |x: f64, y: f64| {
        (
            LEFT + (x - x0) / (x1 - x0) * pw,
            TOP + ph - (y - y0) / (y1 - y0) * ph,
        )
    };

    for i in 0..=5 {
        let t = f64::from(i) / 5.0;
        let gy = TOP + ph - t * ph;
        let gx = LEFT + t * pw;
        c.line((LEFT, gy), (LEFT + pw, gy), GRID, false);
        c.line((gx, TOP), (gx, TOP + ph), GRID, false);
        let ylab = format_tick(y0 + t * (y1 - y0));
        c.text(LEFT as i64 - 6 - Canvas::text_width(&ylab, 1), gy as i64 - 4, &ylab, 1, AXIS);
        let xlab = format_tick(x0 + t * (x1 - x0));
        c.text(gx as i64 - Canvas::text_width(&xlab, 1) / 2, (TOP + ph) as i64 + 8, &xlab, 1, AXIS);
    }
    c.line((LEFT, TOP), (LEFT, TOP + ph), AXIS, false);
    c.line((LEFT, TOP + ph), (LEFT + pw, TOP + ph), AXIS, false);
    if diagonal {
        let a = to_px(x0, y0);
        let b = to_px(x1, y1);
        let steps = 60;
        for s in (0..steps).step_by(2) {
            let t0 = f64::from(s) / f64::from(steps);
            let t1 = f64::from(s + 1) / f64::from(steps);
            c.line(
                (a.0 + (b.0 - a.0) * t0, a.1 + (b.1 - a.1) * t0),
                (a.0 + (b.0 - a.0) * t1, a.1 + (b.1 - a.1) * t1),
                Rgb([150, 150, 150]),
                false,
            );
        }
    }

    for (i, s) in series.iter().enumerate() {
        let color = SERIES_COLORS[i % SERIES_COLORS.len()];
        for w in s.points.windows(2) {
            c.line(to_px(w[0].0, w[0].1), to_px(w[1].0, w[1].1), color, true);
        }
        if s.points.len() == 1 {
            let p = to_px(s.points[0].0, s.points[0].1);
            c.fill_rect(p.0 as u32 - 2, p.1 as u32 - 2, 5, 5, color);
        }
        let ly = TOP as i64 + 8 + i as i64 * 12;
        let lx = (LEFT + pw) as i64 - 150;
        c.fill_rect(lx as u32, ly as u32 + 2, 12, 4, color);
        c.text(lx + 16, ly, s.name, 1, AXIS);
    }

    c.text(
        (f64::from(PLOT_W) / 2.0) as i64 - Canvas::text_width(title, 2) / 2,
        10,
        title,
        2,
        BLACK,
    );
    c.text(
        (LEFT + pw / 2.0) as i64 - Canvas::text_width(x_label, 1) / 2,
        i64::from(PLOT_H) - 18,
        x_label,
        1,
        AXIS,
    );
    c.text(4, TOP as i64 - 14, y_label, 1, AXIS);
    c
}

/// Geometry of an annotated heatmap image.
pub mod heatmap {
    /// Side of one cell in pixels.
    pub const CELL: u32 = 56;
    /// Left edge of the cell grid.
    pub const GRID_LEFT: u32 = 150;
    /// Top edge of the cell grid.
    pub const GRID_TOP: u32 = 70;
    /// Annotation glyph scale (glyphs are `8 * TEXT_SCALE` pixels square).
    pub const TEXT_SCALE: u32 = 2;

    /// Top-left pixel of the annotation text for a cell whose count renders
    /// as `chars` characters.
    pub fn text_origin(row: usize, col: usize, chars: usize) -> (i64, i64) {
        let glyph = i64::from(super::GLYPH * TEXT_SCALE);
        let cx = i64::from(GRID_LEFT + CELL * col as u32 + CELL / 2);
        let cy = i64::from(GRID_TOP + CELL * row as u32 + CELL / 2);
        (cx - glyph * chars as i64 / 2, cy - glyph / 2)
    }
}

fn heat_color(t: f64) -> Rgb<u8> {
    let lo = [236.0, 242.0, 250.0];
    let hi = [18.0, 52.0, 120.0];
    Rgb([0, 1, 2].map(|i| (lo[i] + (hi[i] - lo[i]) * t.clamp(0.0, 1.0)).round() as u8))
}

/// Confusion heatmap: rows are true classes, columns predicted classes.
/// Cell counts are drawn in pure black or pure white, never used for cell
/// fills.
pub fn confusion_heatmap(title: &str, labels: &[String], counts: &[Vec<u64>]) -> Canvas {
    use heatmap::*;
    let k = labels.len() as u32;
    let width = GRID_LEFT + CELL * k + 30;
    let height = GRID_TOP + CELL * k + 60 + 12 * k;
    let mut c = Canvas::new(width, height);
    let max = counts.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
    for (i, row) in counts.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let t = v as f64 / max;
            c.fill_rect(GRID_LEFT + CELL * j as u32, GRID_TOP + CELL * i as u32, CELL, CELL, heat_color(t));
            let text = v.to_string();
            let (tx, ty) = text_origin(i, j, text.len());
            let ink = if t > 0.5 { WHITE } else { BLACK };
            c.text(tx, ty, &text, TEXT_SCALE, ink);
        }
    }
    for i in 0..k {
        let idx = i.to_string();
        let y = i64::from(GRID_TOP + CELL * i + CELL / 2 - 4);
        c.text(i64::from(GRID_LEFT) - 16, y, &idx, 1, AXIS);
        let x = i64::from(GRID_LEFT + CELL * i + CELL / 2 - 4);
        c.text(x, i64::from(GRID_TOP) - 14, &idx, 1, AXIS);
    }
    c.text(8, i64::from(GRID_TOP) - 14, "true \\ predicted", 1, AXIS);
    let legend_top = i64::from(GRID_TOP + CELL * k + 16);
    for (i, name) in labels.iter().enumerate() {
        let line: String = format!("{i}: {name}").chars().take(60).collect();
        c.text(8, legend_top + 12 * i as i64, &line, 1, AXIS);
    }
    c.text(8, 14, title, 2, BLACK);
    c
}
