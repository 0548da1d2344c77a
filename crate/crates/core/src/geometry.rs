//! Scan geometries, view masks and the sparse/limited-view extraction that
//! turns one full-view sinogram into the inputs of the three tasks.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{CtError, Result};
use crate::projector::Sinogram;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BeamMode {
    #[serde(rename = "parallel")]
    Parallel,
    #[serde(rename = "fan-equiangular")]
    FanEquiangular,
}

/// Acquisition description shared by every operator.
///
/// Angles are in degrees. For parallel beams `detector_spacing` is a length;
/// for equiangular fan beams `fan_increment` is the angle between adjacent
/// detector bins and `source_to_center` the source orbit radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanGeometry {
    pub beam_mode: BeamMode,
    pub n_views: usize,
    /// (start, extent) in degrees.
    pub angular_range: (f64, f64),
    pub n_detectors: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector_spacing: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fan_increment: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_to_center: Option<f64>,
    pub grid_size: usize,
    pub pixel_size: f64,
}

impl ScanGeometry {
    /// Parallel-beam full 360° scan with detector spacing equal to the pixel size.
    pub fn parallel(n_views: usize, n_detectors: usize, grid_size: usize, pixel_size: f64) -> Self {
        ScanGeometry {
            beam_mode: BeamMode::Parallel,
            n_views,
            angular_range: (0.0, 360.0),
            n_detectors,
            detector_spacing: Some(pixel_size),
            fan_increment: None,
            source_to_center: None,
            grid_size,
            pixel_size,
        }
    }

    /// Equiangular fan-beam full 360° scan.
    ///
    /// The source sits at twice the image diagonal and the fan is opened just
    /// wide enough (plus 2%) to cover the image's circumscribed circle.
    pub fn fan(n_views: usize, n_detectors: usize, grid_size: usize, pixel_size: f64) -> Self {
        let diag = grid_size as f64 * pixel_size * std::f64::consts::SQRT_2;
        let radius = 2.0 * diag;
        let half_fan = (0.5 * diag / radius).asin() * 1.02;
        let increment = if n_detectors > 1 {
            2.0 * half_fan / (n_detectors as f64 - 1.0)
        } else {
            2.0 * half_fan
        };
        ScanGeometry {
            beam_mode: BeamMode::FanEquiangular,
            n_views,
            angular_range: (0.0, 360.0),
            n_detectors,
            detector_spacing: None,
            fan_increment: Some(increment.to_degrees()),
            source_to_center: Some(radius),
            grid_size,
            pixel_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_views == 0 || self.n_detectors == 0 || self.grid_size == 0 {
            return Err(CtError::config(format!(
                "n_views ({}), n_detectors ({}) and grid_size ({}) must all be >= 1",
                self.n_views, self.n_detectors, self.grid_size
            )));
        }
        if !(self.pixel_size > 0.0) || !self.pixel_size.is_finite() {
            return Err(CtError::config(format!("pixel_size must be > 0, got {}", self.pixel_size)));
        }
        if !(self.angular_range.1 > 0.0) || !self.angular_range.0.is_finite() {
            return Err(CtError::config(format!(
                "angular extent must be > 0, got {:?}",
                self.angular_range
            )));
        }
        match self.beam_mode {
            BeamMode::Parallel => match self.detector_spacing {
                Some(s) if s > 0.0 && s.is_finite() => {}
                other => {
                    return Err(CtError::config(format!(
                        "parallel beam needs detector_spacing > 0, got {other:?}"
                    )))
                }
            },
            BeamMode::FanEquiangular => {
                match self.fan_increment {
                    Some(s) if s > 0.0 && s.is_finite() => {}
                    other => {
                        return Err(CtError::config(format!(
                            "fan beam needs fan_increment > 0, got {other:?}"
                        )))
                    }
                }
                let half_diag = self.grid_size as f64 * self.pixel_size / std::f64::consts::SQRT_2;
                match self.source_to_center {
                    Some(r) if r > half_diag => {}
                    other => {
                        return Err(CtError::config(format!(
                            "fan beam needs source_to_center > {half_diag} (outside the image support), got {other:?}"
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    /// Angular step between consecutive views, degrees.
    pub fn angular_increment(&self) -> f64 {
        self.angular_range.1 / self.n_views as f64
    }

    /// Angle of view `i` in degrees.
    pub fn view_angle(&self, i: usize) -> f64 {
        self.angular_range.0 + i as f64 * self.angular_increment()
    }

    pub fn view_angles_rad(&self) -> Vec<f64> {
        (0..self.n_views).map(|i| self.view_angle(i).to_radians()).collect()
    }

    /// Detector sampling interval: a length for parallel beams, radians for fan beams.
    pub fn detector_step(&self) -> f64 {
        match self.beam_mode {
            BeamMode::Parallel => self.detector_spacing.unwrap_or(self.pixel_size),
            BeamMode::FanEquiangular => self.fan_increment.unwrap_or(0.0).to_radians(),
        }
    }

    /// Signed position of detector bin `k` relative to the central ray.
    pub fn detector_position(&self, k: usize) -> f64 {
        (k as f64 - 0.5 * (self.n_detectors as f64 - 1.0)) * self.detector_step()
    }

    pub fn sinogram_shape(&self) -> (usize, usize) {
        (self.n_views, self.n_detectors)
    }

    pub fn image_shape(&self) -> (usize, usize) {
        (self.grid_size, self.grid_size)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("geometry serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let geom: ScanGeometry = serde_json::from_str(text)
            .map_err(|e| CtError::config(format!("invalid geometry JSON: {e}")))?;
        geom.validate()?;
        Ok(geom)
    }
}

/// Binary missing-data pattern over the views of a scan.
///
/// `order` lists the kept view indices in acquisition order; for a limited arc
/// that wraps past the last view this is not the sorted order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ViewMask {
    kept: Vec<bool>,
    order: Vec<usize>,
}

impl ViewMask {
    pub fn keep_all(n_views: usize) -> Self {
        ViewMask {
            kept: vec![true; n_views],
            order: (0..n_views).collect(),
        }
    }

    /// Rebuild a mask from its serialized kept-index list.
    pub fn from_kept_indices(n_views: usize, indices: &[usize]) -> Result<Self> {
        let mut kept = vec![false; n_views];
        for &i in indices {
            if i >= n_views {
                return Err(CtError::config(format!(
                    "mask index {i} out of range for {n_views} views"
                )));
            }
            if kept[i] {
                return Err(CtError::config(format!("mask index {i} listed twice")));
            }
            kept[i] = true;
        }
        Ok(ViewMask {
            kept,
            order: indices.to_vec(),
        })
    }

    pub fn n_views(&self) -> usize {
        self.kept.len()
    }

    pub fn keep_count(&self) -> usize {
        self.order.len()
    }

    pub fn is_kept(&self, view: usize) -> bool {
        self.kept[view]
    }

    /// Kept view indices in acquisition order.
    pub fn kept_indices(&self) -> &[usize] {
        &self.order
    }

    /// Per-view value of the mask matrix M: 1 for missing, 0 for measured.
    pub fn missing_rows(&self) -> Vec<f64> {
        self.kept.iter().map(|&k| if k { 0.0 } else { 1.0 }).collect()
    }

    /// The mask matrix M broadcast over detector columns.
    pub fn matrix(&self, n_detectors: usize) -> Array2<f64> {
        let rows = self.missing_rows();
        Array2::from_shape_fn((self.n_views(), n_detectors), |(v, _)| rows[v])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.order).expect("mask serializes")
    }

    pub fn from_json(n_views: usize, text: &str) -> Result<Self> {
        let indices: Vec<usize> = serde_json::from_str(text)
            .map_err(|e| CtError::config(format!("invalid mask JSON: {e}")))?;
        ViewMask::from_kept_indices(n_views, &indices)
    }

    /// (first index, cyclic index step) when the kept views form an
    /// arithmetic progression, which is what a standalone compact geometry needs.
    fn progression(&self) -> Option<(usize, usize)> {
        let n = self.n_views();
        let first = *self.order.first()?;
        if self.order.len() == 1 {
            return Some((first, 1));
        }
        let step = (self.order[1] + n - first) % n;
        if step == 0 {
            return None;
        }
        let ok = self
            .order
            .windows(2)
            .all(|w| (w[1] + n - w[0]) % n == step);
        ok.then_some((first, step))
    }
}

impl serde::Serialize for ViewMask {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.order.serialize(s)
    }
}

/// Periodic sparse-view mask keeping views {0, s, 2s, ...} with s = n_views / keep_count.
pub fn make_sparse_mask(geom: &ScanGeometry, keep_count: usize) -> Result<ViewMask> {
    let n = geom.n_views;
    if keep_count == 0 || keep_count > n || n % keep_count != 0 {
        return Err(CtError::config(format!(
            "sparse keep_count {keep_count} must evenly divide n_views {n}"
        )));
    }
    let stride = n / keep_count;
    let order: Vec<usize> = (0..keep_count).map(|j| j * stride).collect();
    ViewMask::from_kept_indices(n, &order)
}

/// Limited-arc mask: one contiguous run of round(range / extent * n_views)
/// views beginning at `start_view`. Runs may wrap only on full 360° scans.
pub fn make_limited_mask(geom: &ScanGeometry, range_deg: f64, start_view: usize) -> Result<ViewMask> {
    let n = geom.n_views;
    let extent = geom.angular_range.1;
    if !(range_deg > 0.0) || range_deg > extent + 1e-9 {
        return Err(CtError::config(format!(
            "limited range {range_deg} deg must lie in (0, {extent}] deg"
        )));
    }
    let count = (range_deg / extent * n as f64).round() as usize;
    if count == 0 {
        return Err(CtError::config(format!(
            "limited range {range_deg} deg keeps no view out of {n}"
        )));
    }
    if start_view >= n {
        return Err(CtError::config(format!(
            "start_view {start_view} out of range for {n} views"
        )));
    }
    let full_circle = (extent - 360.0).abs() < 1e-9;
    if start_view + count > n && !full_circle {
        return Err(CtError::config(format!(
            "limited run of {count} views from view {start_view} exceeds a {extent} deg scan"
        )));
    }
    let order: Vec<usize> = (0..count).map(|j| (start_view + j) % n).collect();
    ViewMask::from_kept_indices(n, &order)
}

/// Geometry of the standalone scan made of only the kept views.
pub fn compact_geometry(geom: &ScanGeometry, mask: &ViewMask) -> Result<ScanGeometry> {
    if mask.n_views() != geom.n_views {
        return Err(CtError::dim(format!(
            "mask covers {} views but geometry has {}",
            mask.n_views(),
            geom.n_views
        )));
    }
    let (first, step) = mask
        .progression()
        .ok_or_else(|| CtError::config("kept views are not evenly spaced; no compact geometry"))?;
    let delta = geom.angular_increment();
    let count = mask.keep_count();
    let mut out = geom.clone();
    out.n_views = count;
    out.angular_range = (
        geom.angular_range.0 + first as f64 * delta,
        count as f64 * step as f64 * delta,
    );
    Ok(out)
}

/// Keep only the measured rows of `p`, returning a sinogram with the
/// matching reduced geometry.
pub fn extract_compact(p: &Sinogram, mask: &ViewMask) -> Result<Sinogram> {
    if p.data.nrows() != mask.n_views() {
        return Err(CtError::dim(format!(
            "sinogram has {} views, mask expects {}",
            p.data.nrows(),
            mask.n_views()
        )));
    }
    let geom = compact_geometry(&p.geom, mask)?;
    let rows = mask.kept_indices();
    let data = Array2::from_shape_fn((rows.len(), p.data.ncols()), |(i, k)| p.data[[rows[i], k]]);
    Ok(Sinogram { data, geom })
}

/// Place compact rows back at their view indices, zeros on missing rows.
pub fn embed_full(p_compact: &Sinogram, mask: &ViewMask, full: &ScanGeometry) -> Result<Sinogram> {
    let rows = mask.kept_indices();
    if p_compact.data.nrows() != rows.len() {
        return Err(CtError::dim(format!(
            "compact sinogram has {} rows but mask keeps {} views",
            p_compact.data.nrows(),
            rows.len()
        )));
    }
    if full.n_views != mask.n_views() || full.n_detectors != p_compact.data.ncols() {
        return Err(CtError::dim(format!(
            "full geometry {}x{} does not fit mask of {} views and {} detectors",
            full.n_views,
            full.n_detectors,
            mask.n_views(),
            p_compact.data.ncols()
        )));
    }
    let mut data = Array2::zeros((full.n_views, full.n_detectors));
    for (i, &v) in rows.iter().enumerate() {
        data.row_mut(v).assign(&p_compact.data.row(i));
    }
    Ok(Sinogram {
        data,
        geom: full.clone(),
    })
}
