//! Ray-driven traversal with linear interpolation between pixel centres
//! (Joseph's method). Both the forward projector and every backprojector
//! are built from this one loop.

use crate::geometry::{BeamMode, ScanGeometry};

/// A ray `origin + s * dir` with `dir` of unit length.
#[derive(Clone, Copy, Debug)]
pub struct Ray {
    pub origin: [f64; 2],
    pub dir: [f64; 2],
}

impl Ray {
    /// Ray for view `view`, detector bin `det` of `geom`.
    pub fn for_bin(geom: &ScanGeometry, angle: f64, det: usize) -> Ray {
        let pos = geom.detector_position(det);
        match geom.beam_mode {
            BeamMode::Parallel => {
                // start the ray outside the grid so every sample has positive distance
                let back = geom.grid_size as f64 * geom.pixel_size;
                let (s, c) = angle.sin_cos();
                Ray {
                    origin: [pos * c + back * s, pos * s - back * c],
                    dir: [-s, c],
                }
            }
            BeamMode::FanEquiangular => {
                let radius = geom.source_to_center.unwrap_or(0.0);
                let (s, c) = angle.sin_cos();
                let (ds, dc) = (angle + pos).sin_cos();
                Ray {
                    origin: [radius * c, radius * s],
                    dir: [-dc, -ds],
                }
            }
        }
    }
}

/// Visit every (pixel index, weight, distance along ray) sample of `ray`
/// through an `n x n` grid with square pixels of side `pixel`.
///
/// Pixel (r, c) has centre x = (c - (n-1)/2) * pixel, y = ((n-1)/2 - r) * pixel,
/// so row 0 is the top of the image. Samples at negative distance are skipped
/// (they lie behind a fan source).
pub fn trace<F: FnMut(usize, f64, f64)>(n: usize, pixel: f64, ray: &Ray, mut visit: F) {
    let half = 0.5 * (n as f64 - 1.0);
    let [ox, oy] = ray.origin;
    let [dx, dy] = ray.dir;
    if dy.abs() >= dx.abs() {
        let step = pixel / dy.abs();
        for r in 0..n {
            let y = (half - r as f64) * pixel;
            let s = (y - oy) / dy;
            if s < 0.0 {
                continue;
            }
            let u = (ox + s * dx) / pixel + half;
            let c0 = u.floor();
            let frac = u - c0;
            let c0 = c0 as isize;
            if c0 >= 0 && (c0 as usize) < n {
                visit(r * n + c0 as usize, step * (1.0 - frac), s);
            }
            let c1 = c0 + 1;
            if c1 >= 0 && (c1 as usize) < n && frac > 0.0 {
                visit(r * n + c1 as usize, step * frac, s);
            }
        }
    } else {
        let step = pixel / dx.abs();
        for c in 0..n {
            let x = (c as f64 - half) * pixel;
            let s = (x - ox) / dx;
            if s < 0.0 {
                continue;
            }
            let v = half - (oy + s * dy) / pixel;
            let r0 = v.floor();
            let frac = v - r0;
            let r0 = r0 as isize;
            if r0 >= 0 && (r0 as usize) < n {
                visit(r0 as usize * n + c, step * (1.0 - frac), s);
            }
            let r1 = r0 + 1;
            if r1 >= 0 && (r1 as usize) < n && frac > 0.0 {
                visit(r1 as usize * n + c, step * frac, s);
            }
        }
    }
}
