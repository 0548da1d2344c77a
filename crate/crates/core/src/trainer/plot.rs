//! Minimal line chart rasterizer for training curves.

use std::path::Path;

use crate::error::{CtError, Result};

const WIDTH: usize = 720;
const HEIGHT: usize = 420;
const MARGIN: usize = 40;

pub const COLORS: [[u8; 3]; 4] = [[31, 119, 180], [255, 127, 14], [44, 160, 44], [0, 0, 0]];

struct Canvas {
    px: Vec<u8>,
}

impl Canvas {
    fn new() -> Self {
        Canvas {
            px: vec![255; WIDTH * HEIGHT * 3],
        }
    }

    fn set(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < WIDTH && (y as usize) < HEIGHT {
            let i = (y as usize * WIDTH + x as usize) * 3;
            self.px[i..i + 3].copy_from_slice(&c);
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3]) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.set(x, y, c);
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
}

/// Render series of (step, value) points on shared axes and save as PNG.
/// With `log_y`, values are plotted as log10 (non-positive points skipped).
pub fn save_line_chart(path: &Path, series: &[Vec<(f64, f64)>], log_y: bool) -> Result<()> {
    let map = |v: f64| if log_y { (v > 0.0).then(|| v.log10()) } else { v.is_finite().then_some(v) };
    let pts: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| s.iter().filter_map(|&(x, y)| map(y).map(|y| (x, y))).collect())
        .collect();
    let all = pts.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let mut canvas = Canvas::new();
    let (l, r, t, b) = (MARGIN as i64, (WIDTH - MARGIN / 2) as i64, (MARGIN / 2) as i64, (HEIGHT - MARGIN) as i64);
    canvas.line((l, b), (r, b), [0; 3]);
    canvas.line((l, b), (l, t), [0; 3]);
    if x0 <= x1 {
        let sx = if x1 > x0 { (r - l) as f64 / (x1 - x0) } else { 0.0 };
        let sy = if y1 > y0 { (b - t) as f64 / (y1 - y0) } else { 0.0 };
        for (k, s) in pts.iter().enumerate() {
            let c = COLORS[k % COLORS.len()];
            let to_px = |&(x, y): &(f64, f64)| (l + ((x - x0) * sx) as i64, b - ((y - y0) * sy) as i64);
            for w in s.windows(2) {
                canvas.line(to_px(&w[0]), to_px(&w[1]), c);
            }
            if s.len() == 1 {
                let (x, y) = to_px(&s[0]);
                canvas.set(x, y, c);
            }
        }
    }
    image::save_buffer(path, &canvas.px, WIDTH as u32, HEIGHT as u32, image::ExtendedColorType::Rgb8)
        .map_err(|e| CtError::io(path, std::io::Error::other(e)))
}
