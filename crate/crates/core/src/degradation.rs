//! Low-dose noise simulation and construction of the three task inputs
//! (low-dose full view, sparse view, limited view) from one clean scan.

use log::debug;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{CtError, Result};
use crate::geometry::{compact_geometry, extract_compact, make_limited_mask, make_sparse_mask, ScanGeometry, ViewMask};
use crate::projector::{FilterWindow, ImageGrid, Projector, Sinogram};

/// Incident photons per detector bin at full dose.
pub const DEFAULT_I0: f64 = 1e5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoseConfig {
    pub i0: f64,
    pub dose_fraction: f64,
}

impl Default for DoseConfig {
    fn default() -> Self {
        DoseConfig {
            i0: DEFAULT_I0,
            dose_fraction: 0.25,
        }
    }
}

impl DoseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.i0 > 0.0) || !self.i0.is_finite() {
            return Err(CtError::config(format!("I0 must be > 0, got {}", self.i0)));
        }
        if !(self.dose_fraction > 0.0 && self.dose_fraction <= 1.0) {
            return Err(CtError::config(format!(
                "dose fraction must lie in (0, 1], got {}",
                self.dose_fraction
            )));
        }
        Ok(())
    }
}

/// Mix a base seed with a slice index (splitmix64 finalizer) so every slice
/// gets an independent stream regardless of build order.
pub fn slice_seed(seed: u64, slice: u64) -> u64 {
    let mut z = seed ^ slice.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Poisson transmission noise: counts N ~ Poisson(f · I0 · e^{-p}),
/// returned as −ln(max(N, 1) / (f · I0)), plus the number of bins floored.
pub fn inject_low_dose_counted(p_clean: &Sinogram, dose: DoseConfig, seed: u64) -> Result<(Sinogram, usize)> {
    dose.validate()?;
    if let Some(v) = p_clean.data.iter().find(|v| **v < 0.0 || !v.is_finite()) {
        return Err(CtError::Input(format!(
            "line integrals must be finite and >= 0, found {v}"
        )));
    }
    let blank = dose.dose_fraction * dose.i0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut floored = 0usize;
    let data = p_clean.data.mapv(|p| {
        let mean = blank * (-p).exp();
        let counts = if mean > 0.0 {
            Poisson::new(mean).expect("positive mean").sample(&mut rng)
        } else {
            0.0
        };
        if counts < 1.0 {
            floored += 1;
        }
        -(counts.max(1.0) / blank).ln()
    });
    if floored > 0 {
        debug!("photon starvation: {floored} bins floored at one count");
    }
    Ok((
        Sinogram {
            data,
            geom: p_clean.geom.clone(),
        },
        floored,
    ))
}

pub fn inject_low_dose(p_clean: &Sinogram, dose: DoseConfig, seed: u64) -> Result<Sinogram> {
    inject_low_dose_counted(p_clean, dose, seed).map(|(s, _)| s)
}

/// Degradation settings shared by every slice of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripletConfig {
    pub dose: DoseConfig,
    pub sparse_keep: usize,
    pub limited_deg: f64,
    pub limited_start: usize,
    pub window: FilterWindow,
}

/// One training record: the three task sinograms, their FBP images and masks.
#[derive(Clone, Debug)]
pub struct TaskTriplet {
    pub slice_id: String,
    pub p_ld: Sinogram,
    pub mu_ld: ImageGrid,
    /// Compact sparse-view sinogram.
    pub p_sv: Sinogram,
    pub mu_sv: ImageGrid,
    /// Compact limited-view sinogram.
    pub p_lv: Sinogram,
    pub mu_lv: ImageGrid,
    pub mask_sv: ViewMask,
    pub mask_lv: ViewMask,
    /// Bins that hit the one-photon floor.
    pub floored: usize,
}

/// Reusable projectors for the full, sparse and limited geometries.
pub struct TripletBuilder {
    cfg: TripletConfig,
    full: Projector,
    sparse: Projector,
    limited: Projector,
    mask_sv: ViewMask,
    mask_lv: ViewMask,
}

impl TripletBuilder {
    pub fn new(geom: &ScanGeometry, cfg: TripletConfig) -> Result<Self> {
        cfg.dose.validate()?;
        let mask_sv = make_sparse_mask(geom, cfg.sparse_keep)?;
        let mask_lv = make_limited_mask(geom, cfg.limited_deg, cfg.limited_start)?;
        Ok(TripletBuilder {
            full: Projector::new(geom)?,
            sparse: Projector::new(&compact_geometry(geom, &mask_sv)?)?,
            limited: Projector::new(&compact_geometry(geom, &mask_lv)?)?,
            cfg,
            mask_sv,
            mask_lv,
        })
    }

    pub fn full_projector(&self) -> &Projector {
        &self.full
    }

    pub fn masks(&self) -> (&ViewMask, &ViewMask) {
        (&self.mask_sv, &self.mask_lv)
    }

    /// Inject noise once into the full-view sinogram, then extract the sparse
    /// and limited rows from that same noisy realization.
    ///
    /// The noisy sinogram is rounded to `f32` so that what is written to disk
    /// is exactly what the FBP images were computed from.
    pub fn build(&self, p_clean: &Sinogram, seed: u64, slice_id: &str) -> Result<TaskTriplet> {
        let (noisy, floored) = inject_low_dose_counted(p_clean, self.cfg.dose, seed)?;
        let p_ld = Sinogram {
            data: noisy.data.mapv(|v| v as f32 as f64),
            geom: noisy.geom,
        };
        let p_sv = extract_compact(&p_ld, &self.mask_sv)?;
        let p_lv = extract_compact(&p_ld, &self.mask_lv)?;
        let w = self.cfg.window;
        Ok(TaskTriplet {
            slice_id: slice_id.to_string(),
            mu_ld: self.full.fbp(&p_ld, w)?,
            mu_sv: self.sparse.fbp(&p_sv, w)?,
            mu_lv: self.limited.fbp(&p_lv, w)?,
            p_ld,
            p_sv,
            p_lv,
            mask_sv: self.mask_sv.clone(),
            mask_lv: self.mask_lv.clone(),
            floored,
        })
    }
}

/// One-off triplet construction; see [`TripletBuilder`] for repeated use.
pub fn build_triplet(p_clean: &Sinogram, cfg: &TripletConfig, seed: u64) -> Result<TaskTriplet> {
    TripletBuilder::new(&p_clean.geom, cfg.clone())?.build(p_clean, seed, "slice")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantoms::{random_ellipse_phantom, unit_pixel_size};
    use ndarray::Array2;

    fn geom(views: usize) -> ScanGeometry {
        ScanGeometry::parallel(views, 24, 16, unit_pixel_size(16))
    }

    fn clean(views: usize) -> Sinogram {
        let g = geom(views);
        Projector::new(&g)
            .unwrap()
            .forward(&random_ellipse_phantom(16, 4, 3))
            .unwrap()
    }

    #[test]
    fn high_count_limit_recovers_clean() {
        let p = clean(32);
        let dose = DoseConfig { i0: 1e9, dose_fraction: 1.0 };
        let noisy = inject_low_dose(&p, dose, 1).unwrap();
        let err: f64 = (&noisy.data - &p.data).mapv(|v| v * v).sum();
        let rel = (err / p.data.mapv(|v| v * v).sum()).sqrt();
        assert!(rel < 1e-3, "{rel}");
    }

    #[test]
    fn unattenuated_beam_is_unbiased() {
        let g = geom(64);
        let p = Sinogram::zeros(&g);
        let dose = DoseConfig { i0: 1e4, dose_fraction: 1.0 };
        let noisy = inject_low_dose(&p, dose, 5).unwrap();
        let bins = noisy.data.len() as f64;
        let mean = noisy.data.sum() / bins;
        // per-bin std of −ln(N/I0) is about 1/sqrt(I0)
        let sigma = 1.0 / dose.i0.sqrt();
        assert!(mean.abs() < 5.0 * sigma / bins.sqrt(), "{mean}");
    }

    #[test]
    fn same_seed_bitwise_identical() {
        let p = clean(32);
        let a = inject_low_dose(&p, DoseConfig::default(), 42).unwrap();
        let b = inject_low_dose(&p, DoseConfig::default(), 42).unwrap();
        assert!(a.data.iter().zip(b.data.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = inject_low_dose(&p, DoseConfig::default(), 43).unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut p = clean(8);
        assert!(inject_low_dose(&p, DoseConfig { i0: 0.0, dose_fraction: 1.0 }, 0).is_err());
        assert!(inject_low_dose(&p, DoseConfig { i0: 1e5, dose_fraction: 1.5 }, 0).is_err());
        p.data[[0, 0]] = -1.0;
        assert!(matches!(inject_low_dose(&p, DoseConfig::default(), 0), Err(CtError::Input(_))));
    }

    #[test]
    fn starvation_is_floored_and_counted() {
        let g = geom(8);
        let p = Sinogram {
            data: Array2::from_elem(g.sinogram_shape(), 40.0),
            geom: g,
        };
        let (noisy, floored) = inject_low_dose_counted(&p, DoseConfig::default(), 0).unwrap();
        assert_eq!(floored, noisy.data.len());
        assert!(noisy.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn variance_grows_as_dose_drops() {
        let p = clean(64);
        let var = |f: f64| {
            let n = inject_low_dose(&p, DoseConfig { i0: 1e4, dose_fraction: f }, 9).unwrap();
            (&n.data - &p.data).mapv(|v| v * v).mean().unwrap()
        };
        assert!(var(1.0 / 8.0) > var(1.0 / 4.0));
        assert!(var(1.0 / 6.0) > var(1.0 / 4.0));
    }

    #[test]
    fn triplet_shares_noise_realization() {
        let p = clean(96);
        let cfg = TripletConfig {
            dose: DoseConfig::default(),
            sparse_keep: 12,
            limited_deg: 120.0,
            limited_start: 0,
            window: FilterWindow::Hann,
        };
        let t = build_triplet(&p, &cfg, 7).unwrap();
        assert_eq!(t.p_sv.data.dim(), (12, 24));
        assert_eq!(t.p_lv.data.dim(), (32, 24));
        for j in 0..12 {
            assert_eq!(t.p_sv.data.row(j), t.p_ld.data.row(8 * j));
        }
        for j in 0..32 {
            assert_eq!(t.p_lv.data.row(j), t.p_ld.data.row(j));
        }
        let sv_geom = t.p_sv.geom.clone();
        let again = Projector::new(&sv_geom).unwrap().fbp(&t.p_sv, FilterWindow::Hann).unwrap();
        assert_eq!(again, t.mu_sv);
    }

    #[test]
    fn keep_all_triplet_is_identical() {
        let p = clean(32);
        let cfg = TripletConfig {
            dose: DoseConfig::default(),
            sparse_keep: 32,
            limited_deg: 360.0,
            limited_start: 0,
            window: FilterWindow::Hann,
        };
        let t = build_triplet(&p, &cfg, 1).unwrap();
        assert_eq!(t.p_sv, t.p_ld);
        assert_eq!(t.p_lv, t.p_ld);
        assert_eq!(t.mu_sv, t.mu_ld);
        assert_eq!(t.mu_lv, t.mu_ld);
    }

    #[test]
    fn full_scale_triplet_shapes() {
        let g = ScanGeometry::parallel(1152, 8, 4, 0.5);
        let p = Sinogram::zeros(&g);
        let cfg = TripletConfig {
            dose: DoseConfig { i0: 1e5, dose_fraction: 0.25 },
            sparse_keep: 144,
            limited_deg: 120.0,
            limited_start: 0,
            window: FilterWindow::Hann,
        };
        let t = build_triplet(&p, &cfg, 2).unwrap();
        assert_eq!(t.p_sv.data.dim(), (144, 8));
        assert_eq!(t.p_lv.data.dim(), (384, 8));
    }

    #[test]
    fn slice_seeds_differ() {
        let seeds: Vec<u64> = (0..100).map(|i| slice_seed(7, i)).collect();
        let mut uniq = seeds.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), seeds.len());
    }
}
