//! Forward projection A, its exact adjoint, ramp filtering and FBP.
//!
//! The system matrix is assembled once per geometry from the ray traversal
//! in [`ray`] and stored in both row (ray) and column (pixel) compressed form,
//! so `A x` and `Aᵀ y` are gathers over the very same coefficients.

mod filter;
pub mod ray;

use ndarray::Array2;
use rayon::prelude::*;

pub use filter::{padded_len, ramp_response, FilterWindow, RampFilter};

use crate::error::{CtError, Result};
use crate::geometry::{BeamMode, ScanGeometry};
use ray::{trace, Ray};

/// Projection-domain data: one row per view, one column per detector bin.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    pub data: Array2<f64>,
    pub geom: ScanGeometry,
}

impl Sinogram {
    pub fn zeros(geom: &ScanGeometry) -> Self {
        Sinogram {
            data: Array2::zeros(geom.sinogram_shape()),
            geom: geom.clone(),
        }
    }

    pub fn new(data: Array2<f64>, geom: ScanGeometry) -> Result<Self> {
        if data.dim() != geom.sinogram_shape() {
            return Err(CtError::dim(format!(
                "sinogram data {:?} does not match geometry {:?}",
                data.dim(),
                geom.sinogram_shape()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CtError::Input("sinogram contains non-finite values".into()));
        }
        Ok(Sinogram { data, geom })
    }
}

/// Image-domain data on a square grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    pub data: Array2<f64>,
    pub pixel_size: f64,
}

impl ImageGrid {
    pub fn zeros(n: usize, pixel_size: f64) -> Self {
        ImageGrid {
            data: Array2::zeros((n, n)),
            pixel_size,
        }
    }

    pub fn new(data: Array2<f64>, pixel_size: f64) -> Result<Self> {
        if data.nrows() != data.ncols() {
            return Err(CtError::dim(format!("image must be square, got {:?}", data.dim())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CtError::Input("image contains non-finite values".into()));
        }
        Ok(ImageGrid { data, pixel_size })
    }

    pub fn size(&self) -> usize {
        self.data.nrows()
    }
}

/// Sparse system matrix in CSR (rays) and CSC (pixels) form.
struct SystemMatrix {
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
    /// Backprojection weights for FBP, same sparsity as `values`.
    fbp_values: Vec<f64>,
    col_ptr: Vec<usize>,
    row_idx: Vec<u32>,
    t_values: Vec<f64>,
    t_fbp_values: Vec<f64>,
}

impl SystemMatrix {
    fn build(geom: &ScanGeometry) -> Self {
        let n = geom.grid_size;
        let pixel = geom.pixel_size;
        let n_pix = n * n;
        let angles = geom.view_angles_rad();
        let step = geom.detector_step();
        let pix2 = pixel * pixel;

        let per_view: Vec<(Vec<usize>, Vec<u32>, Vec<f64>, Vec<f64>)> = angles
            .par_iter()
            .map(|&angle| {
                let mut lens = Vec::with_capacity(geom.n_detectors);
                let mut cols = Vec::new();
                let mut vals = Vec::new();
                let mut fbp = Vec::new();
                for det in 0..geom.n_detectors {
                    let ray = Ray::for_bin(geom, angle, det);
                    let before = cols.len();
                    trace(n, pixel, &ray, |idx, w, dist| {
                        cols.push(idx as u32);
                        vals.push(w);
                        let scale = match geom.beam_mode {
                            BeamMode::Parallel => step / pix2,
                            BeamMode::FanEquiangular => step / (pix2 * dist),
                        };
                        fbp.push(w * scale);
                    });
                    lens.push(cols.len() - before);
                }
                (lens, cols, vals, fbp)
            })
            .collect();

        let nnz: usize = per_view.iter().map(|v| v.1.len()).sum();
        let mut row_ptr = Vec::with_capacity(geom.n_views * geom.n_detectors + 1);
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        let mut fbp_values = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for (lens, cols, vals, fbp) in per_view {
            for l in lens {
                row_ptr.push(row_ptr.last().unwrap() + l);
            }
            col_idx.extend(cols);
            values.extend(vals);
            fbp_values.extend(fbp);
        }

        // transpose by counting sort; rows are visited in increasing order so
        // each column's entries end up sorted by ray index
        let mut col_ptr = vec![0usize; n_pix + 1];
        for &c in &col_idx {
            col_ptr[c as usize + 1] += 1;
        }
        for j in 0..n_pix {
            col_ptr[j + 1] += col_ptr[j];
        }
        let mut fill = col_ptr.clone();
        let mut row_idx = vec![0u32; nnz];
        let mut t_values = vec![0.0; nnz];
        let mut t_fbp_values = vec![0.0; nnz];
        for row in 0..row_ptr.len() - 1 {
            for e in row_ptr[row]..row_ptr[row + 1] {
                let c = col_idx[e] as usize;
                let dst = fill[c];
                fill[c] += 1;
                row_idx[dst] = row as u32;
                t_values[dst] = values[e];
                t_fbp_values[dst] = fbp_values[e];
            }
        }

        SystemMatrix {
            row_ptr,
            col_idx,
            values,
            fbp_values,
            col_ptr,
            row_idx,
            t_values,
            t_fbp_values,
        }
    }

    fn gather_rows(&self, values: &[f64], x: &[f64], y: &mut [f64]) {
        y.par_chunks_mut(256).enumerate().for_each(|(chunk, out)| {
            for (k, yi) in out.iter_mut().enumerate() {
                let i = chunk * 256 + k;
                let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
                *yi = self.col_idx[a..b]
                    .iter()
                    .zip(&values[a..b])
                    .map(|(&j, &w)| w * x[j as usize])
                    .sum();
            }
        });
    }

    fn gather_cols(&self, values: &[f64], y: &[f64], x: &mut [f64]) {
        x.par_chunks_mut(256).enumerate().for_each(|(chunk, out)| {
            for (k, xj) in out.iter_mut().enumerate() {
                let j = chunk * 256 + k;
                let (a, b) = (self.col_ptr[j], self.col_ptr[j + 1]);
                *xj = self.row_idx[a..b]
                    .iter()
                    .zip(&values[a..b])
                    .map(|(&i, &w)| w * y[i as usize])
                    .sum();
            }
        });
    }
}

/// Linear projection operators for one geometry.
pub struct Projector {
    geom: ScanGeometry,
    matrix: SystemMatrix,
}

impl std::fmt::Debug for Projector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Projector")
            .field("geom", &self.geom)
            .field("nnz", &self.matrix.values.len())
            .finish()
    }
}

impl Projector {
    pub fn new(geom: &ScanGeometry) -> Result<Self> {
        geom.validate()?;
        Ok(Projector {
            geom: geom.clone(),
            matrix: SystemMatrix::build(geom),
        })
    }

    pub fn geometry(&self) -> &ScanGeometry {
        &self.geom
    }

    pub fn image_len(&self) -> usize {
        self.geom.grid_size * self.geom.grid_size
    }

    pub fn sinogram_len(&self) -> usize {
        self.geom.n_views * self.geom.n_detectors
    }

    pub fn nnz(&self) -> usize {
        self.matrix.values.len()
    }

    /// `y = A x` on flat row-major buffers.
    pub fn forward_raw(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.image_len());
        debug_assert_eq!(y.len(), self.sinogram_len());
        self.matrix.gather_rows(&self.matrix.values, x, y);
    }

    /// `x = Aᵀ y` on flat row-major buffers.
    pub fn adjoint_raw(&self, y: &[f64], x: &mut [f64]) {
        debug_assert_eq!(x.len(), self.image_len());
        debug_assert_eq!(y.len(), self.sinogram_len());
        self.matrix.gather_cols(&self.matrix.t_values, y, x);
    }

    /// Per-view scale applied after backprojection in FBP.
    ///
    /// Angular step in radians, halved once the arc exceeds 180° because
    /// every line is then measured more than once.
    pub fn view_weight(&self) -> f64 {
        let extent = self.geom.angular_range.1;
        self.geom.angular_increment().to_radians() * (180.0 / extent).min(1.0)
    }

    /// Detector pre-weights (R cos γ for fan beams, 1 for parallel beams).
    pub fn pre_weights(&self) -> Vec<f64> {
        match self.geom.beam_mode {
            BeamMode::Parallel => vec![1.0; self.geom.n_detectors],
            BeamMode::FanEquiangular => {
                let r = self.geom.source_to_center.unwrap_or(0.0);
                (0..self.geom.n_detectors)
                    .map(|k| r * self.geom.detector_position(k).cos())
                    .collect()
            }
        }
    }

    pub fn ramp(&self, window: FilterWindow) -> RampFilter {
        RampFilter::new(self.geom.n_detectors, self.geom.detector_step(), window)
    }

    /// FBP on flat buffers: `x = w · B (ramp (D y))`.
    pub fn fbp_raw(&self, y: &[f64], window: FilterWindow, x: &mut [f64]) {
        let mut q = self.weighted(y);
        self.ramp(window).apply(&mut q);
        self.matrix.gather_cols(&self.matrix.t_fbp_values, &q, x);
        let w = self.view_weight();
        x.iter_mut().for_each(|v| *v *= w);
    }

    /// Transpose of [`Projector::fbp_raw`]: `y = D ramp (Bᵀ (w x))`.
    pub fn fbp_adjoint_raw(&self, x: &[f64], window: FilterWindow, y: &mut [f64]) {
        let w = self.view_weight();
        let scaled: Vec<f64> = x.iter().map(|v| v * w).collect();
        self.matrix.gather_rows(&self.matrix.fbp_values, &scaled, y);
        self.ramp(window).apply(y);
        let pre = self.pre_weights();
        for row in y.chunks_mut(self.geom.n_detectors) {
            row.iter_mut().zip(&pre).for_each(|(v, d)| *v *= d);
        }
    }

    fn weighted(&self, y: &[f64]) -> Vec<f64> {
        let pre = self.pre_weights();
        let mut q = y.to_vec();
        for row in q.chunks_mut(self.geom.n_detectors) {
            row.iter_mut().zip(&pre).for_each(|(v, d)| *v *= d);
        }
        q
    }

    fn check_image(&self, img: &ImageGrid) -> Result<()> {
        let n = self.geom.grid_size;
        if img.data.dim() != (n, n) {
            return Err(CtError::dim(format!(
                "image {:?} does not match {n}x{n} grid",
                img.data.dim()
            )));
        }
        Ok(())
    }

    fn check_sinogram(&self, p: &Sinogram) -> Result<()> {
        if p.data.dim() != self.geom.sinogram_shape() {
            return Err(CtError::dim(format!(
                "sinogram {:?} does not match geometry {:?}",
                p.data.dim(),
                self.geom.sinogram_shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, img: &ImageGrid) -> Result<Sinogram> {
        self.check_image(img)?;
        let x = contiguous(&img.data);
        let mut y = vec![0.0; self.sinogram_len()];
        self.forward_raw(&x, &mut y);
        Ok(Sinogram {
            data: Array2::from_shape_vec(self.geom.sinogram_shape(), y).expect("shape"),
            geom: self.geom.clone(),
        })
    }

    pub fn adjoint(&self, p: &Sinogram) -> Result<ImageGrid> {
        self.check_sinogram(p)?;
        let y = contiguous(&p.data);
        let mut x = vec![0.0; self.image_len()];
        self.adjoint_raw(&y, &mut x);
        Ok(self.image_from(x))
    }

    pub fn fbp(&self, p: &Sinogram, window: FilterWindow) -> Result<ImageGrid> {
        self.check_sinogram(p)?;
        let y = contiguous(&p.data);
        let mut x = vec![0.0; self.image_len()];
        self.fbp_raw(&y, window, &mut x);
        Ok(self.image_from(x))
    }

    fn image_from(&self, x: Vec<f64>) -> ImageGrid {
        let n = self.geom.grid_size;
        ImageGrid {
            data: Array2::from_shape_vec((n, n), x).expect("shape"),
            pixel_size: self.geom.pixel_size,
        }
    }
}

fn contiguous(a: &Array2<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

/// Discrete line integrals of `img` along every ray of `geom`.
pub fn forward_project(img: &ImageGrid, geom: &ScanGeometry) -> Result<Sinogram> {
    Projector::new(geom)?.forward(img)
}

/// Exact transpose of [`forward_project`].
pub fn back_project(p: &Sinogram, geom: &ScanGeometry) -> Result<ImageGrid> {
    Projector::new(geom)?.adjoint(p)
}

/// Ramp-filter every view of `p` along the detector axis.
pub fn ramp_filter(p: &Sinogram, window: FilterWindow) -> Result<Sinogram> {
    let (_, n_det) = p.data.dim();
    if n_det < 2 {
        return Err(CtError::dim(format!("ramp filter needs >= 2 detectors, got {n_det}")));
    }
    let mut data = contiguous(&p.data);
    RampFilter::new(n_det, p.geom.detector_step(), window).apply(&mut data);
    Ok(Sinogram {
        data: Array2::from_shape_vec(p.data.dim(), data).expect("shape"),
        geom: p.geom.clone(),
    })
}

/// Filtered backprojection of `p` under `geom`.
pub fn fbp(p: &Sinogram, geom: &ScanGeometry, window: FilterWindow) -> Result<ImageGrid> {
    Projector::new(geom)?.fbp(p, window)
}
