//! Test objects: the modified Shepp-Logan phantom, uniform disks and seeded
//! random-ellipse phantoms used as training anatomy.
//!
//! Phantoms live on the square [-1, 1]², so an `n`-pixel grid has pixel size
//! `2 / n`. Intensities are attenuation per unit length in those coordinates.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::projector::ImageGrid;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub intensity: f64,
    /// Semi-axis along the (rotated) x direction.
    pub a: f64,
    pub b: f64,
    pub x0: f64,
    pub y0: f64,
    /// Counter-clockwise rotation, degrees.
    pub phi: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.phi.to_radians().sin_cos();
        let dx = x - self.x0;
        let dy = y - self.y0;
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u * u) / (self.a * self.a) + (v * v) / (self.b * self.b) <= 1.0
    }

    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.a * self.b
    }
}

/// Modified (high-contrast) Shepp-Logan ellipse table.
pub const SHEPP_LOGAN: [Ellipse; 10] = [
    Ellipse { intensity: 1.0, a: 0.69, b: 0.92, x0: 0.0, y0: 0.0, phi: 0.0 },
    Ellipse { intensity: -0.8, a: 0.6624, b: 0.874, x0: 0.0, y0: -0.0184, phi: 0.0 },
    Ellipse { intensity: -0.2, a: 0.11, b: 0.31, x0: 0.22, y0: 0.0, phi: -18.0 },
    Ellipse { intensity: -0.2, a: 0.16, b: 0.41, x0: -0.22, y0: 0.0, phi: 18.0 },
    Ellipse { intensity: 0.1, a: 0.21, b: 0.25, x0: 0.0, y0: 0.35, phi: 0.0 },
    Ellipse { intensity: 0.1, a: 0.046, b: 0.046, x0: 0.0, y0: 0.1, phi: 0.0 },
    Ellipse { intensity: 0.1, a: 0.046, b: 0.046, x0: 0.0, y0: -0.1, phi: 0.0 },
    Ellipse { intensity: 0.1, a: 0.046, b: 0.023, x0: -0.08, y0: -0.605, phi: 0.0 },
    Ellipse { intensity: 0.1, a: 0.023, b: 0.023, x0: 0.0, y0: -0.606, phi: 0.0 },
    Ellipse { intensity: 0.1, a: 0.023, b: 0.046, x0: 0.06, y0: -0.605, phi: 0.0 },
];

/// Pixel size of an `n`-pixel grid spanning [-1, 1].
pub fn unit_pixel_size(n: usize) -> f64 {
    2.0 / n as f64
}

/// Pixel-centre coordinates (x, y) of pixel (r, c).
pub fn pixel_center(n: usize, r: usize, c: usize) -> (f64, f64) {
    let pix = unit_pixel_size(n);
    let half = 0.5 * (n as f64 - 1.0);
    ((c as f64 - half) * pix, (half - r as f64) * pix)
}

/// Rasterize additive ellipses by pixel-centre membership.
pub fn rasterize(n: usize, ellipses: &[Ellipse]) -> ImageGrid {
    let data = Array2::from_shape_fn((n, n), |(r, c)| {
        let (x, y) = pixel_center(n, r, c);
        ellipses
            .iter()
            .filter(|e| e.contains(x, y))
            .map(|e| e.intensity)
            .sum()
    });
    ImageGrid {
        data,
        pixel_size: unit_pixel_size(n),
    }
}

pub fn shepp_logan(n: usize) -> ImageGrid {
    rasterize(n, &SHEPP_LOGAN)
}

/// Uniform disk of `radius` (unit coordinates) centred at the origin.
pub fn uniform_disk(n: usize, radius: f64, value: f64) -> ImageGrid {
    rasterize(
        n,
        &[Ellipse {
            intensity: value,
            a: radius,
            b: radius,
            x0: 0.0,
            y0: 0.0,
            phi: 0.0,
        }],
    )
}

/// Outer radius every random ellipse stays inside.
pub const SUPPORT_RADIUS: f64 = 0.95;

/// Ellipse list of a seeded random phantom.
///
/// The first ellipse is a large water-like body (intensity 1.6-2.0, so central
/// line integrals land around 3-4); the rest are smaller inclusions of either
/// sign, weaker than the body, placed inside it.
pub fn random_ellipses(count: usize, seed: u64) -> Vec<Ellipse> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Ellipse> = Vec::with_capacity(count);
    for i in 0..count {
        let (a, b, intensity): (f64, f64, f64) = if i == 0 {
            (
                rng.gen_range(0.65..0.85),
                rng.gen_range(0.65..0.85),
                rng.gen_range(1.6..2.0),
            )
        } else {
            let sign = if rng.gen_bool(0.6) { 1.0 } else { -1.0 };
            (
                rng.gen_range(0.08..0.3),
                rng.gen_range(0.08..0.3),
                sign * rng.gen_range(0.2..0.8),
            )
        };
        // the body stays near the centre; inclusions sit fully inside the
        // body's inscribed circle
        let (cx, cy, reach) = match out.first() {
            None => (0.0, 0.0, (SUPPORT_RADIUS - a.max(b)).min(0.05)),
            Some(body) => (body.x0, body.y0, (body.a.min(body.b) - a.max(b)).max(0.0)),
        };
        let rho = reach * rng.gen::<f64>().sqrt();
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        out.push(Ellipse {
            intensity,
            a,
            b,
            x0: cx + rho * theta.cos(),
            y0: cy + rho * theta.sin(),
            phi: rng.gen_range(0.0..180.0),
        });
    }
    out
}

pub fn random_ellipse_phantom(n: usize, ellipse_count: usize, seed: u64) -> ImageGrid {
    let mut img = rasterize(n, &random_ellipses(ellipse_count, seed));
    img.data.mapv_inplace(|v| v.max(0.0));
    img
}
