//! Static plot rendering onto PNG images: polyline charts, histograms and
//! saliency overlays. Axis endpoints are labeled with a small built-in
//! digit font; series metadata lives in the CSV files written next to each
//! plot.

use image::{Rgb, RgbImage};

const WIDTH: u32 = 640;
const HEIGHT: u32 = 480;
const MARGIN: u32 = 40;

pub const SERIES_COLORS: [[u8; 3]; 6] = [
    [214, 69, 65],
    [31, 119, 180],
    [44, 160, 44],
    [148, 103, 189],
    [255, 127, 14],
    [23, 190, 207],
];

/// 3x5 digit glyphs for axis labels: `0-9`, `.`, `-`.
const GLYPHS: [(char, [u8; 5]); 12] = [
    ('0', [0b111, 0b101, 0b101, 0b101, 0b111]),
    ('1', [0b010, 0b110, 0b010, 0b010, 0b111]),
    ('2', [0b111, 0b001, 0b111, 0b100, 0b111]),
    ('3', [0b111, 0b001, 0b111, 0b001, 0b111]),
    ('4', [0b101, 0b101, 0b111, 0b001, 0b001]),
    ('5', [0b111, 0b100, 0b111, 0b001, 0b111]),
    ('6', [0b111, 0b100, 0b111, 0b101, 0b111]),
    ('7', [0b111, 0b001, 0b010, 0b010, 0b010]),
    ('8', [0b111, 0b101, 0b111, 0b101, 0b111]),
    ('9', [0b111, 0b101, 0b111, 0b001, 0b111]),
    ('.', [0b000, 0b000, 0b000, 0b000, 0b010]),
    ('-', [0b000, 0b000, 0b111, 0b000, 0b000]),
];

fn draw_text(img: &mut RgbImage, x: u32, y: u32, text: &str) {
    let mut cx = x;
    for ch in text.chars() {
        if let Some((_, rows)) = GLYPHS.iter().find(|(c, _)| *c == ch) {
            for (dy, row) in rows.iter().enumerate() {
                for dx in 0..3u32 {
                    if row >> (2 - dx) & 1 == 1 {
                        let (px, py) = (cx + dx, y + dy as u32);
                        if px < img.width() && py < img.height() {
                            img.put_pixel(px, py, Rgb([60, 60, 60]));
                        }
                    }
                }
            }
        }
        cx += 4;
    }
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn draw_line(img: &mut RgbImage, a: (f32, f32), b: (f32, f32), color: Rgb<u8>) {
    let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()) as u32).max(1);
    for i in 0..=steps {
        let t = i as f32 / steps as f32;
        let x = a.0 + (b.0 - a.0) * t;
        let y = a.1 + (b.1 - a.1) * t;
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn to_px(&self, x: f64, y: f64) -> (f32, f32) {
        let w = (WIDTH - 2 * MARGIN) as f64;
        let h = (HEIGHT - 2 * MARGIN) as f64;
        let fx = MARGIN as f64 + (x - self.x_min) / (self.x_max - self.x_min).max(1e-12) * w;
        let fy = (HEIGHT - MARGIN) as f64
            - (y - self.y_min) / (self.y_max - self.y_min).max(1e-12) * h;
        (fx as f32, fy as f32)
    }
}

fn frame_for(series: &[Vec<(f64, f64)>]) -> Frame {
    let mut f = Frame {
        x_min: f64::INFINITY,
        x_max: f64::NEG_INFINITY,
        y_min: f64::INFINITY,
        y_max: f64::NEG_INFINITY,
    };
    for s in series {
        for &(x, y) in s {
            f.x_min = f.x_min.min(x);
            f.x_max = f.x_max.max(x);
            f.y_min = f.y_min.min(y);
            f.y_max = f.y_max.max(y);
        }
    }
    if !f.x_min.is_finite() {
        f = Frame {
            x_min: 0.0,
            x_max: 1.0,
            y_min: 0.0,
            y_max: 1.0,
        };
    }
    if f.x_min == f.x_max {
        f.x_max += 1.0;
    }
    if f.y_min == f.y_max {
        f.y_max += 1.0;
    }
    f
}

fn blank_with_axes(frame: &Frame) -> RgbImage {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let axis = Rgb([120, 120, 120]);
    let (x0, y0) = (MARGIN as f32, (HEIGHT - MARGIN) as f32);
    let (x1, y1) = ((WIDTH - MARGIN) as f32, MARGIN as f32);
    draw_line(&mut img, (x0, y0), (x1, y0), axis);
    draw_line(&mut img, (x0, y0), (x0, y1), axis);
    draw_text(&mut img, MARGIN, HEIGHT - MARGIN + 6, &fmt_tick(frame.x_min));
    draw_text(
        &mut img,
        WIDTH - MARGIN - 20,
        HEIGHT - MARGIN + 6,
        &fmt_tick(frame.x_max),
    );
    draw_text(&mut img, 4, HEIGHT - MARGIN - 2, &fmt_tick(frame.y_min));
    draw_text(&mut img, 4, MARGIN, &fmt_tick(frame.y_max));
    img
}

/// Polyline chart; one color per series, in `SERIES_COLORS` order.
pub fn line_chart(path: &std::path::Path, series: &[Vec<(f64, f64)>]) -> Result<(), String> {
    let frame = frame_for(series);
    let mut img = blank_with_axes(&frame);
    for (i, s) in series.iter().enumerate() {
        let color = Rgb(SERIES_COLORS[i % SERIES_COLORS.len()]);
        for pair in s.windows(2) {
            draw_line(
                &mut img,
                frame.to_px(pair[0].0, pair[0].1),
                frame.to_px(pair[1].0, pair[1].1),
                color,
            );
        }
    }
    img.save(path).map_err(|e| e.to_string())
}

/// Two-population histogram with per-bin bars; populations share the bins.
pub fn histogram_chart(
    path: &std::path::Path,
    centers: &[f64],
    counts_a: &[f64],
    counts_b: &[f64],
) -> Result<(), String> {
    let max = counts_a
        .iter()
        .chain(counts_b)
        .copied()
        .fold(0.0f64, f64::max)
        .max(1.0);
    let frame = Frame {
        x_min: *centers.first().unwrap_or(&0.0),
        x_max: *centers.last().unwrap_or(&1.0),
        y_min: 0.0,
        y_max: max,
    };
    let mut img = blank_with_axes(&frame);
    let bar_w = ((WIDTH - 2 * MARGIN) as f32 / centers.len().max(1) as f32 / 2.0).max(1.0);
    for (series_idx, counts) in [counts_a, counts_b].into_iter().enumerate() {
        let color = Rgb(SERIES_COLORS[series_idx]);
        for (&c, &n) in centers.iter().zip(counts) {
            let (x, y) = frame.to_px(c, n);
            let x = x + series_idx as f32 * bar_w - bar_w / 2.0;
            let base = (HEIGHT - MARGIN) as f32;
            for dx in 0..bar_w as u32 {
                draw_line(&mut img, (x + dx as f32, base), (x + dx as f32, y), color);
            }
        }
    }
    img.save(path).map_err(|e| e.to_string())
}

/// Grayscale image with the saliency map blended in as a red heat layer.
pub fn saliency_overlay(
    path: &std::path::Path,
    base: &anocon::Image2D,
    saliency: &anocon::Grid,
) -> Result<(), String> {
    let (h, w) = (base.height() as u32, base.width() as u32);
    let smax = saliency.max().max(1e-12);
    let mut img = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let g = (base.get(y as usize, x as usize).clamp(0.0, 1.0) * 255.0) as f64;
            let s = (saliency.get(y as usize, x as usize) / smax).clamp(0.0, 1.0);
            let r = (g + s * (255.0 - g)) as u8;
            let rest = (g * (1.0 - 0.7 * s)) as u8;
            img.put_pixel(x, y, Rgb([r, rest, rest]));
        }
    }
    img.save(path).map_err(|e| e.to_string())
}
