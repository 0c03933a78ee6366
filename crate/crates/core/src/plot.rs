//! Minimal deterministic PNG chart rendering for training and evaluation
//! curves.
//!
//! Everything is drawn from scratch onto an RGB buffer (axes, tick marks,
//! numeric labels from a built-in 5×7 bitmap font, polylines, shaded bands),
//! so a given input always produces byte-identical image files.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::{CoreError, Result};

/// Default series colors (index into this from calling code).
pub const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],  // blue
    [214, 39, 40],   // red
    [44, 160, 44],   // green
    [255, 127, 14],  // orange
    [148, 103, 189], // purple
    [127, 127, 127], // grey
];

const MARGIN_LEFT: u32 = 64;
const MARGIN_RIGHT: u32 = 16;
const MARGIN_TOP: u32 = 14;
const MARGIN_BOTTOM: u32 = 28;
const BG: Rgb<u8> = Rgb([255, 255, 255]);
const FG: Rgb<u8> = Rgb([0, 0, 0]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);

/// One polyline, indexed by sample position on the x axis.
pub struct Series<'a> {
    pub values: &'a [f64],
    pub color: [u8; 3],
}

#[derive(Debug, Clone)]
pub struct ChartOptions {
    pub width: u32,
    pub height: u32,
    /// Fixed y range; inferred from the data (with 5% padding) when `None`.
    pub y_min: Option<f64>,
    pub y_max: Option<f64>,
}

impl Default for ChartOptions {
    fn default() -> Self {
        ChartOptions { width: 900, height: 540, y_min: None, y_max: None }
    }
}

// ─── 5×7 bitmap font (numeric labels only) ───────────────────────────────

/// Rows are 5-bit patterns, most significant bit = leftmost pixel.
fn glyph(c: char) -> Option<[u8; 7]> {
    Some(match c {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        'e' => [0x00, 0x00, 0x0E, 0x11, 0x1F, 0x10, 0x0E],
        ' ' => [0x00; 7],
        _ => return None,
    })
}

fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, color: Rgb<u8>) {
    let mut cx = x;
    for c in text.chars() {
        if let Some(rows) = glyph(c) {
            for (ry, row) in rows.iter().enumerate() {
                for col in 0..5u8 {
                    if row & (0x10 >> col) != 0 {
                        put_pixel(img, cx + col as i64, y + ry as i64, color);
                    }
                }
            }
        }
        cx += 6; // 5 px glyph + 1 px spacing
    }
}

fn text_width(text: &str) -> i64 {
    text.chars().count() as i64 * 6 - 1
}

fn put_pixel(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

fn draw_line(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, color: Rgb<u8>) {
    // Bresenham
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let (mut x, mut y) = (x0, y0);
    loop {
        put_pixel(img, x, y, color);
        if x == x1 && y == y1 {
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

// ─── Axes ────────────────────────────────────────────────────────────────

struct Frame {
    x0: u32,
    y0: u32, // top-left of plot area
    w: u32,
    h: u32,
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn px(&self, x: f64) -> i64 {
        let t = (x - self.x_min) / (self.x_max - self.x_min);
        self.x0 as i64 + (t * (self.w - 1) as f64).round() as i64
    }

    fn py(&self, y: f64) -> i64 {
        let t = (y - self.y_min) / (self.y_max - self.y_min);
        self.y0 as i64 + ((1.0 - t) * (self.h - 1) as f64).round() as i64
    }
}

/// Largest "nice" step (1, 2, or 5 times a power of ten) that splits the
/// range into at least `min_ticks` intervals.
fn nice_step(range: f64, min_ticks: u32) -> f64 {
    let raw = range / min_ticks as f64;
    let mag = 10f64.powf(raw.log10().floor());
    for m in [5.0, 2.0, 1.0] {
        if m * mag <= raw {
            return m * mag;
        }
    }
    mag
}

fn fmt_tick(v: f64, step: f64) -> String {
    let v = if v == 0.0 { 0.0 } else { v }; // normalize -0
    // print with just enough decimals to distinguish neighboring ticks
    let decimals = if step >= 1.0 { 0 } else { (-step.log10().floor()) as usize };
    format!("{v:.decimals$}")
}

fn draw_frame(img: &mut RgbImage, frame: &Frame) {
    let right = (frame.x0 + frame.w - 1) as i64;
    let bottom = (frame.y0 + frame.h - 1) as i64;
    let left = frame.x0 as i64;
    let top = frame.y0 as i64;

    // horizontal grid + y tick labels
    let y_step = nice_step(frame.y_max - frame.y_min, 4);
    let mut tick = (frame.y_min / y_step).ceil() * y_step;
    while tick <= frame.y_max + 1e-9 * y_step {
        let py = frame.py(tick);
        draw_line(img, left, py, right, py, GRID);
        let label = fmt_tick(tick, y_step);
        draw_text(img, left - 6 - text_width(&label), py - 3, &label, FG);
        tick += y_step;
    }

    // vertical grid + x tick labels
    let x_step = nice_step(frame.x_max - frame.x_min, 4).max(1.0);
    let mut tick = (frame.x_min / x_step).ceil() * x_step;
    while tick <= frame.x_max + 1e-9 * x_step {
        let px = frame.px(tick);
        draw_line(img, px, top, px, bottom, GRID);
        let label = fmt_tick(tick, x_step);
        draw_text(img, px - text_width(&label) / 2, bottom + 6, &label, FG);
        tick += x_step;
    }

    // axes on top of the grid
    draw_line(img, left, top, left, bottom, FG);
    draw_line(img, left, bottom, right, bottom, FG);
}

fn data_range(series: &[Series<'_>]) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in series {
        for &v in s.values.iter().filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    (lo <= hi).then_some((lo, hi))
}

fn build_frame(series: &[Series<'_>], opts: &ChartOptions) -> Result<Frame> {
    if series.iter().all(|s| s.values.len() < 2) {
        return Err(CoreError::Usage(
            "chart needs at least one series with two or more points".into(),
        ));
    }
    if opts.width < MARGIN_LEFT + MARGIN_RIGHT + 32
        || opts.height < MARGIN_TOP + MARGIN_BOTTOM + 32
    {
        return Err(CoreError::Usage("chart dimensions too small".into()));
    }
    let (mut y_min, mut y_max) =
        data_range(series).unwrap_or((0.0, 1.0));
    let pad = 0.05 * (y_max - y_min).max(1e-12);
    y_min -= pad;
    y_max += pad;
    if let Some(v) = opts.y_min {
        y_min = v;
    }
    if let Some(v) = opts.y_max {
        y_max = v;
    }
    if !(y_max > y_min) {
        return Err(CoreError::Usage(format!(
            "invalid y range [{y_min}, {y_max}]"
        )));
    }
    let x_max = series.iter().map(|s| s.values.len()).max().unwrap_or(2) - 1;
    Ok(Frame {
        x0: MARGIN_LEFT,
        y0: MARGIN_TOP,
        w: opts.width - MARGIN_LEFT - MARGIN_RIGHT,
        h: opts.height - MARGIN_TOP - MARGIN_BOTTOM,
        x_min: 0.0,
        x_max: x_max as f64,
        y_min,
        y_max,
    })
}

// ─── Public API ──────────────────────────────────────────────────────────

/// Renders index-vs-value polylines over shared axes.
pub fn line_chart(series: &[Series<'_>], opts: &ChartOptions) -> Result<RgbImage> {
    let frame = build_frame(series, opts)?;
    let mut img = RgbImage::from_pixel(opts.width, opts.height, BG);
    draw_frame(&mut img, &frame);
    for s in series {
        let color = Rgb(s.color);
        let mut prev: Option<(i64, i64)> = None;
        for (i, &v) in s.values.iter().enumerate() {
            if !v.is_finite() {
                prev = None; // break the polyline at gaps
                continue;
            }
            let p = (frame.px(i as f64), frame.py(v.clamp(frame.y_min, frame.y_max)));
            if let Some(q) = prev {
                draw_line(&mut img, q.0, q.1, p.0, p.1, color);
            } else {
                put_pixel(&mut img, p.0, p.1, color);
            }
            prev = Some(p);
        }
    }
    Ok(img)
}

/// Renders a mean curve with a shaded ±`spread` band behind it.
pub fn band_chart(
    mean: &[f64],
    spread: &[f64],
    color: [u8; 3],
    opts: &ChartOptions,
) -> Result<RgbImage> {
    if mean.len() != spread.len() {
        return Err(CoreError::Shape(format!(
            "mean has {} points but spread has {}",
            mean.len(),
            spread.len()
        )));
    }
    let lower: Vec<f64> = mean.iter().zip(spread).map(|(m, s)| m - s).collect();
    let upper: Vec<f64> = mean.iter().zip(spread).map(|(m, s)| m + s).collect();
    let range_probe = [
        Series { values: &lower, color },
        Series { values: &upper, color },
    ];
    let frame = build_frame(&range_probe, opts)?;
    let mut img = RgbImage::from_pixel(opts.width, opts.height, BG);
    draw_frame(&mut img, &frame);

    // soften the series color for the band fill
    let band = Rgb([
        color[0] / 4 + 191,
        color[1] / 4 + 191,
        color[2] / 4 + 191,
    ]);
    for i in 0..mean.len() {
        if !(lower[i].is_finite() && upper[i].is_finite()) {
            continue;
        }
        let px = frame.px(i as f64);
        let y_hi = frame.py(upper[i].clamp(frame.y_min, frame.y_max));
        let y_lo = frame.py(lower[i].clamp(frame.y_min, frame.y_max));
        draw_line(&mut img, px, y_hi, px, y_lo, band);
    }
    let mean_series = [Series { values: mean, color }];
    let mut prev: Option<(i64, i64)> = None;
    for (i, &v) in mean_series[0].values.iter().enumerate() {
        if !v.is_finite() {
            prev = None;
            continue;
        }
        let p = (frame.px(i as f64), frame.py(v.clamp(frame.y_min, frame.y_max)));
        if let Some(q) = prev {
            draw_line(&mut img, q.0, q.1, p.0, p.1, Rgb(color));
        }
        prev = Some(p);
    }
    Ok(img)
}

/// Renders and writes a line chart as PNG.
pub fn save_line_chart(path: &Path, series: &[Series<'_>], opts: &ChartOptions) -> Result<()> {
    let img = line_chart(series, opts)?;
    img.save(path).map_err(|e| CoreError::Usage(format!("cannot write chart: {e}")))
}

/// Renders and writes a band chart as PNG.
pub fn save_band_chart(
    path: &Path,
    mean: &[f64],
    spread: &[f64],
    color: [u8; 3],
    opts: &ChartOptions,
) -> Result<()> {
    let img = band_chart(mean, spread, color, opts)?;
    img.save(path).map_err(|e| CoreError::Usage(format!("cannot write chart: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count_color(img: &RgbImage, color: [u8; 3]) -> usize {
        img.pixels().filter(|p| p.0 == color).count()
    }

    #[test]
    fn line_chart_draws_axes_labels_and_series() {
        let values: Vec<f64> = (0..100).map(|i| (i as f64 * 0.1).sin() * 50.0).collect();
        let series = [Series { values: &values, color: PALETTE[0] }];
        let img = line_chart(&series, &ChartOptions::default()).unwrap();
        assert_eq!((img.width(), img.height()), (900, 540));
        assert_eq!(img.get_pixel(0, 0).0, [255, 255, 255]);
        assert!(count_color(&img, PALETTE[0]) > 100, "series missing");
        assert!(count_color(&img, [0, 0, 0]) > 500, "axes/labels missing");
    }

    #[test]
    fn charts_are_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.png");
        let b = dir.path().join("b.png");
        let values: Vec<f64> = (0..50).map(|i| i as f64 * i as f64).collect();
        let series = [Series { values: &values, color: PALETTE[1] }];
        save_line_chart(&a, &series, &ChartOptions::default()).unwrap();
        save_line_chart(&b, &series, &ChartOptions::default()).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn flat_and_gapped_series_render() {
        let flat = [5.0; 30];
        let series = [Series { values: &flat, color: PALETTE[2] }];
        line_chart(&series, &ChartOptions::default()).unwrap();

        let gapped = [1.0, 2.0, f64::NAN, 4.0, 5.0];
        let series = [Series { values: &gapped, color: PALETTE[2] }];
        let img = line_chart(&series, &ChartOptions::default()).unwrap();
        assert!(count_color(&img, PALETTE[2]) > 0);
    }

    #[test]
    fn band_chart_fills_a_band() {
        let mean: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let spread = vec![4.0; 40];
        let img = band_chart(&mean, &spread, PALETTE[0], &ChartOptions::default()).unwrap();
        let band_color = [
            PALETTE[0][0] / 4 + 191,
            PALETTE[0][1] / 4 + 191,
            PALETTE[0][2] / 4 + 191,
        ];
        assert!(count_color(&img, band_color) > count_color(&img, PALETTE[0]));
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert!(line_chart(&[], &ChartOptions::default()).is_err());
        let one = [1.0];
        assert!(
            line_chart(&[Series { values: &one, color: PALETTE[0] }], &ChartOptions::default())
                .is_err()
        );
        let mean = [1.0, 2.0];
        let spread = [0.1];
        assert!(band_chart(&mean, &spread, PALETTE[0], &ChartOptions::default()).is_err());
        let vals = [1.0, 2.0, 3.0];
        let opts = ChartOptions { y_min: Some(5.0), y_max: Some(1.0), ..Default::default() };
        assert!(line_chart(&[Series { values: &vals, color: PALETTE[0] }], &opts).is_err());
    }

    #[test]
    fn nice_steps_and_tick_formatting() {
        assert_eq!(nice_step(10.0, 4), 2.0);
        assert_eq!(nice_step(100.0, 4), 20.0);
        assert_eq!(nice_step(1.0, 4), 0.2);
        assert_eq!(fmt_tick(0.2, 0.2), "0.2");
        assert_eq!(fmt_tick(-0.0, 0.2), "0.0");
        assert_eq!(fmt_tick(-0.0, 1.0), "0");
        assert_eq!(fmt_tick(1500.0, 500.0), "1500");
    }
}
