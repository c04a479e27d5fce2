//! Minimal actual-vs-predicted line chart.

use std::path::Path;

use image::{Rgb, RgbImage};

const WIDTH: u32 = 1000;
const HEIGHT: u32 = 400;
const MARGIN: u32 = 20;

fn draw_line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
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

/// Actual in black, predicted in red.
pub fn render(actual: &[f64], predicted: &[f64], path: &Path) -> Result<(), image::ImageError> {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let all = actual.iter().chain(predicted).copied().filter(|v| v.is_finite());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let n = actual.len().max(2);
    let plot_w = (WIDTH - 2 * MARGIN) as f64;
    let plot_h = (HEIGHT - 2 * MARGIN) as f64;
    let to_px = |i: usize, v: f64| {
        let x = MARGIN as f64 + plot_w * i as f64 / (n - 1) as f64;
        let y = MARGIN as f64 + plot_h * (1.0 - (v - lo) / span);
        (x.round() as i64, y.round() as i64)
    };
    for (series, color) in [(actual, Rgb([0, 0, 0])), (predicted, Rgb([220, 30, 30]))] {
        for i in 1..series.len() {
            if series[i - 1].is_finite() && series[i].is_finite() {
                draw_line(&mut img, to_px(i - 1, series[i - 1]), to_px(i, series[i]), color);
            }
        }
    }
    img.save(path)
}
