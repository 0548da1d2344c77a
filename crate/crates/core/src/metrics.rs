//! PSNR, NMSE and SSIM, plus the per-slice evaluation report.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::error::{CtError, Result};

fn check_shapes(x: &Array2<f64>, reference: &Array2<f64>) -> Result<()> {
    if x.dim() != reference.dim() {
        return Err(CtError::dim(format!(
            "metric inputs differ in shape: {:?} vs {:?}",
            x.dim(),
            reference.dim()
        )));
    }
    Ok(())
}

pub fn mse(x: &Array2<f64>, reference: &Array2<f64>) -> Result<f64> {
    check_shapes(x, reference)?;
    let sum: f64 = x
        .iter()
        .zip(reference.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / x.len() as f64)
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` when the images are identical.
pub fn psnr(x: &Array2<f64>, reference: &Array2<f64>, data_range: f64) -> Result<f64> {
    if !(data_range > 0.0) {
        return Err(CtError::Input(format!("data_range must be > 0, got {data_range}")));
    }
    let m = mse(x, reference)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * data_range.log10() - 10.0 * m.log10())
}

/// ‖x − ref‖² / ‖ref‖².
pub fn nmse(x: &Array2<f64>, reference: &Array2<f64>) -> Result<f64> {
    check_shapes(x, reference)?;
    let (num, den) = x
        .iter()
        .zip(reference.iter())
        .fold((0.0, 0.0), |(n, d), (a, b)| (n + (a - b) * (a - b), d + b * b));
    if den == 0.0 {
        return Ok(if num == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(num / den)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window_size: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window_size: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = 0.5 * (size as f64 - 1.0);
    let mut taps: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Separable Gaussian filter keeping only windows that fit inside the image.
fn filter_valid(img: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let (h, w) = img.dim();
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let horiz: Array2<f64> = Array2::from_shape_fn((h, ow), |(r, c)| {
        taps.iter().enumerate().map(|(t, &g)| g * img[[r, c + t]]).sum::<f64>()
    });
    Array2::from_shape_fn((oh, ow), |(r, c)| {
        taps.iter().enumerate().map(|(t, &g)| g * horiz[[r + t, c]]).sum()
    })
}

/// Mean structural similarity over all fully contained Gaussian windows.
pub fn ssim(x: &Array2<f64>, reference: &Array2<f64>, params: SsimParams, data_range: f64) -> Result<f64> {
    check_shapes(x, reference)?;
    let (h, w) = x.dim();
    if h < params.window_size || w < params.window_size {
        return Err(CtError::dim(format!(
            "image {h}x{w} smaller than SSIM window {}",
            params.window_size
        )));
    }
    if !(data_range > 0.0) {
        return Err(CtError::Input(format!("data_range must be > 0, got {data_range}")));
    }
    let taps = gaussian_taps(params.window_size, params.sigma);
    let c1 = (params.k1 * data_range).powi(2);
    let c2 = (params.k2 * data_range).powi(2);
    let mx = filter_valid(x, &taps);
    let my = filter_valid(reference, &taps);
    let mxx = filter_valid(&(x * x), &taps);
    let myy = filter_valid(&(reference * reference), &taps);
    let mxy = filter_valid(&(x * reference), &taps);
    let mut total = 0.0;
    for ((((&ux, &uy), &sxx), &syy), &sxy) in mx.iter().zip(&my).zip(&mxx).zip(&myy).zip(&mxy) {
        let vx = sxx - ux * ux;
        let vy = syy - uy * uy;
        let cxy = sxy - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2))
            / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok(total / mx.len() as f64)
}

/// Reference-set data range: max − min over every reference image.
pub fn data_range<'a>(references: impl IntoIterator<Item = &'a Array2<f64>>) -> f64 {
    let (lo, hi) = references
        .into_iter()
        .flat_map(|r| r.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    hi - lo
}

/// Mean and (population) standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        if values.is_empty() {
            return Summary { mean: f64::NAN, std: f64::NAN };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        if mean.is_infinite() {
            return Summary { mean, std: 0.0 };
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Summary { mean, std: var.sqrt() }
    }
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.6}±{:.6}", self.mean, self.std)
    }
}

/// One row of the evaluation report.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub slice_id: String,
    pub task: String,
    pub method: String,
    pub psnr: f64,
    pub nmse: f64,
    pub ssim: f64,
}

impl EvalRecord {
    pub fn compute(
        slice_id: &str,
        task: &str,
        method: &str,
        x: &Array2<f64>,
        reference: &Array2<f64>,
        range: f64,
    ) -> Result<EvalRecord> {
        Ok(EvalRecord {
            slice_id: slice_id.to_string(),
            task: task.to_string(),
            method: method.to_string(),
            psnr: psnr(x, reference, range)?,
            nmse: nmse(x, reference)?,
            ssim: ssim(x, reference, SsimParams::default(), range)?,
        })
    }
}

pub const REPORT_HEADER: &str = "slice_id,task,method,psnr,nmse,ssim";

/// Write per-slice rows followed by one `summary` row (mean±std) per
/// (task, method) pair, in first-appearance order.
pub fn write_report(path: &Path, records: &[EvalRecord]) -> Result<()> {
    let mut out = String::new();
    out.push_str(REPORT_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.slice_id, r.task, r.method, r.psnr, r.nmse, r.ssim
        ));
    }
    for (task, method, p, n, s) in summarize(records) {
        out.push_str(&format!("summary,{task},{method},{p},{n},{s}\n"));
    }
    let mut f = std::fs::File::create(path).map_err(|e| CtError::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| CtError::io(path, e))
}

/// (task, method, psnr, nmse, ssim) summaries over the records.
pub fn summarize(records: &[EvalRecord]) -> Vec<(String, String, Summary, Summary, Summary)> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in records {
        let k = (r.task.clone(), r.method.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(task, method)| {
            let rows: Vec<&EvalRecord> = records
                .iter()
                .filter(|r| r.task == task && r.method == method)
                .collect();
            let col = |f: fn(&EvalRecord) -> f64| Summary::of(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (p, n, s) = (col(|r| r.psnr), col(|r| r.nmse), col(|r| r.ssim));
            (task, method, p, n, s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pair(seed: u64, n: usize) -> (Array2<f64>, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = Array2::from_shape_fn((n, n), |_| rng.gen::<f64>());
        let x = Array2::from_shape_fn((n, n), |(i, j)| r[[i, j]] + 0.1 * rng.gen::<f64>() - 0.05);
        (x, r)
    }

    /// Direct sliding-window SSIM with explicit 2-D weights.
    fn ssim_direct(x: &Array2<f64>, y: &Array2<f64>, range: f64) -> f64 {
        let p = SsimParams::default();
        let k = p.window_size;
        let c = 0.5 * (k as f64 - 1.0);
        let mut w2 = vec![vec![0.0; k]; k];
        let mut s = 0.0;
        for (i, row) in w2.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
                *v = (-d2 / (2.0 * p.sigma * p.sigma)).exp();
                s += *v;
            }
        }
        let (c1, c2) = ((p.k1 * range).powi(2), (p.k2 * range).powi(2));
        let (h, w) = x.dim();
        let mut total = 0.0;
        let mut count = 0;
        for r0 in 0..=h - k {
            for q0 in 0..=w - k {
                let (mut ux, mut uy) = (0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let g = w2[i][j] / s;
                        ux += g * x[[r0 + i, q0 + j]];
                        uy += g * y[[r0 + i, q0 + j]];
                    }
                }
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let g = w2[i][j] / s;
                        let dx = x[[r0 + i, q0 + j]] - ux;
                        let dy = y[[r0 + i, q0 + j]] - uy;
                        vx += g * dx * dx;
                        vy += g * dy * dy;
                        cxy += g * dx * dy;
                    }
                }
                total += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2))
                    / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn psnr_closed_forms() {
        let r = Array2::from_elem((8, 8), 0.5);
        assert_eq!(psnr(&r, &r, 1.0).unwrap(), f64::INFINITY);
        let x = &r + 0.1;
        assert!((psnr(&x, &r, 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&x, &r, 0.0).is_err());
        assert!(psnr(&Array2::zeros((4, 4)), &r, 1.0).is_err());
    }

    #[test]
    fn nmse_closed_forms() {
        let (_, r) = random_pair(1, 16);
        assert_eq!(nmse(&r, &r).unwrap(), 0.0);
        assert!((nmse(&(&r * 2.0), &r).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_match_brute_force() {
        for seed in 0..20 {
            let (x, r) = random_pair(seed, 24);
            let range = data_range([&r]);
            let mut sq = 0.0;
            let mut ref_sq = 0.0;
            for i in 0..24 {
                for j in 0..24 {
                    sq += (x[[i, j]] - r[[i, j]]).powi(2);
                    ref_sq += r[[i, j]].powi(2);
                }
            }
            let brute_psnr = 10.0 * (range * range / (sq / 576.0)).log10();
            assert!((psnr(&x, &r, range).unwrap() - brute_psnr).abs() < 1e-9);
            assert!((nmse(&x, &r).unwrap() - sq / ref_sq).abs() < 1e-9);
            let direct = ssim_direct(&x, &r, range);
            assert!((ssim(&x, &r, SsimParams::default(), range).unwrap() - direct).abs() < 1e-6);
        }
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let (x, r) = random_pair(3, 20);
        assert!((ssim(&r, &r, SsimParams::default(), 1.0).unwrap() - 1.0).abs() < 1e-12);
        let a = ssim(&x, &r, SsimParams::default(), 1.0).unwrap();
        let b = ssim(&r, &x, SsimParams::default(), 1.0).unwrap();
        assert!((a - b).abs() < 1e-15);
        assert!(ssim(&Array2::zeros((5, 5)), &Array2::zeros((5, 5)), SsimParams::default(), 1.0).is_err());
    }

    #[test]
    fn psnr_decreases_with_noise() {
        let (_, r) = random_pair(4, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise = Array2::from_shape_fn((32, 32), |_| rng.gen::<f64>() - 0.5);
        let vals: Vec<f64> = [0.01, 0.02, 0.05, 0.1, 0.2]
            .iter()
            .map(|a| psnr(&(&r + &(&noise * *a)), &r, 1.0).unwrap())
            .collect();
        assert!(vals.windows(2).all(|w| w[0] > w[1]), "{vals:?}");
    }

    #[test]
    fn nmse_scale_covariant() {
        let (x, r) = random_pair(5, 16);
        for a in [-3.0, 0.5, 7.0] {
            let lhs = nmse(&(&x * a), &(&r * a)).unwrap();
            assert!((lhs - nmse(&x, &r).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn report_schema() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let (x, r) = random_pair(6, 16);
        let recs = vec![
            EvalRecord::compute("s0", "svct", "fbp", &x, &r, 1.0).unwrap(),
            EvalRecord::compute("s1", "svct", "fbp", &r, &r, 1.0).unwrap(),
        ];
        write_report(&path, &recs).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], REPORT_HEADER);
        assert!(lines[2].starts_with("s1,svct,fbp,inf,0,1"));
        assert!(lines[3].starts_with("summary,svct,fbp,inf±0"));
    }
}
