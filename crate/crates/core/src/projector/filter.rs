use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

/// Apodization applied on top of the |f| ramp.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterWindow {
    RamLak,
    #[default]
    Hann,
}

impl std::str::FromStr for FilterWindow {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ram-lak" | "ramlak" => Ok(FilterWindow::RamLak),
            "hann" => Ok(FilterWindow::Hann),
            other => Err(format!("unknown filter window '{other}' (ram-lak, hann)")),
        }
    }
}

/// Padded length used for rows of `n` samples: twice the next power of two.
pub fn padded_len(n: usize) -> usize {
    2 * n.max(1).next_power_of_two()
}

/// Frequency response sampled on the padded DFT grid for sample spacing `step`.
pub fn ramp_response(len: usize, step: f64, window: FilterWindow) -> Vec<f64> {
    let nyquist = 0.5 / step;
    (0..len)
        .map(|m| {
            let k = m.min(len - m) as f64;
            let f = k / (len as f64 * step);
            let w = match window {
                FilterWindow::RamLak => 1.0,
                FilterWindow::Hann => 0.5 * (1.0 + (std::f64::consts::PI * f / nyquist).cos()),
            };
            f * w
        })
        .collect()
}

/// Row-wise ramp filter for rows of a fixed length.
///
/// Output is `IDFT(H * DFT(row))` truncated back to the row length, which
/// approximates the continuous convolution with the ramp kernel. The response
/// is real and even, so the operator is symmetric and is its own transpose.
pub struct RampFilter {
    n: usize,
    len: usize,
    response: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl RampFilter {
    pub fn new(n: usize, step: f64, window: FilterWindow) -> Self {
        let len = padded_len(n);
        let mut planner = FftPlanner::new();
        RampFilter {
            n,
            len,
            response: ramp_response(len, step, window),
            fft: planner.plan_fft_forward(len),
            ifft: planner.plan_fft_inverse(len),
        }
    }

    pub fn row_len(&self) -> usize {
        self.n
    }

    /// Filter every row of a row-major `rows x n` buffer in place.
    pub fn apply(&self, data: &mut [f64]) {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.len];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for row in data.chunks_mut(self.n) {
            self.filter_into(row, &mut buf, &mut scratch);
            for (x, b) in row.iter_mut().zip(buf.iter()) {
                *x = b.re;
            }
        }
    }

    /// Filtered row over the whole padded period, before truncation.
    pub fn apply_padded(&self, row: &[f64]) -> Vec<f64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.len];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        self.filter_into(row, &mut buf, &mut scratch);
        buf.iter().map(|b| b.re).collect()
    }

    fn filter_into(&self, row: &[f64], buf: &mut [Complex64], scratch: &mut [Complex64]) {
        let scale = 1.0 / self.len as f64;
        for b in buf.iter_mut() {
            *b = Complex64::new(0.0, 0.0);
        }
        for (b, &x) in buf.iter_mut().zip(row.iter()) {
            b.re = x;
        }
        self.fft.process_with_scratch(buf, scratch);
        for (b, &h) in buf.iter_mut().zip(self.response.iter()) {
            *b *= h * scale;
        }
        self.ifft.process_with_scratch(buf, scratch);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Spatial kernel by a naive inverse DFT of the response.
    fn naive_kernel(response: &[f64]) -> Vec<f64> {
        let len = response.len();
        (0..len)
            .map(|j| {
                let s: f64 = response
                    .iter()
                    .enumerate()
                    .map(|(m, &h)| {
                        h * (2.0 * std::f64::consts::PI * (m * j) as f64 / len as f64).cos()
                    })
                    .sum();
                s / len as f64
            })
            .collect()
    }

    #[test]
    fn padding_rule() {
        assert_eq!(padded_len(96), 256);
        assert_eq!(padded_len(128), 256);
        assert_eq!(padded_len(2), 4);
    }

    #[test]
    fn constant_row_has_no_dc() {
        for window in [FilterWindow::RamLak, FilterWindow::Hann] {
            let f = RampFilter::new(64, 0.5, window);
            let out = f.apply_padded(&vec![3.0; 64]);
            let mean = out.iter().sum::<f64>() / out.len() as f64;
            assert!(mean.abs() < 1e-8 * 3.0, "{mean}");
        }
    }

    #[test]
    fn delta_matches_direct_convolution() {
        let n = 20;
        let step = 0.7;
        for window in [FilterWindow::RamLak, FilterWindow::Hann] {
            let f = RampFilter::new(n, step, window);
            let kernel = naive_kernel(&ramp_response(padded_len(n), step, window));
            let len = kernel.len();
            for pos in [0usize, 7, 19] {
                let mut row = vec![0.0; n];
                row[pos] = 1.0;
                f.apply(&mut row);
                for (i, &v) in row.iter().enumerate() {
                    let direct = kernel[(i + len - pos) % len];
                    assert!((v - direct).abs() < 1e-10, "{window:?} {pos} {i}: {v} vs {direct}");
                }
            }
        }
    }

    #[test]
    fn filter_is_symmetric() {
        let n = 16;
        let f = RampFilter::new(n, 1.0, FilterWindow::Hann);
        let col = |j: usize| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            f.apply(&mut e);
            e
        };
        for i in 0..n {
            let ci = col(i);
            for j in 0..n {
                assert!((ci[j] - col(j)[i]).abs() < 1e-14);
            }
        }
    }
}
