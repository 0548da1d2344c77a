//! On-disk datasets of task triplets.
//!
//! ```text
//! DIR/manifest.json
//! DIR/slice_0000/{ld,sv,lv}.ctsg {ld,sv,lv}.ctim phantom.ctim meta.json
//! ```
//!
//! `phantom.ctim` is the clean object, used only for evaluation.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::degradation::{slice_seed, DoseConfig, TaskTriplet, TripletBuilder, TripletConfig};
use crate::error::{CtError, Result};
use crate::geometry::{BeamMode, ScanGeometry, ViewMask};
use crate::io;
use crate::phantoms::{random_ellipse_phantom, unit_pixel_size};
use crate::projector::{FilterWindow, ImageGrid};

pub const MANIFEST: &str = "manifest.json";

/// Everything needed to regenerate a dataset bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub phantoms: usize,
    pub size: usize,
    pub views: usize,
    pub detectors: usize,
    pub beam: BeamMode,
    pub dose: DoseConfig,
    pub sparse_keep: usize,
    pub limited_deg: f64,
    pub limited_start: usize,
    pub ellipses: usize,
    pub seed: u64,
    /// The last `holdout` slices form the test split.
    pub holdout: usize,
    pub window: FilterWindow,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            phantoms: 36,
            size: 64,
            views: 288,
            detectors: 96,
            beam: BeamMode::Parallel,
            dose: DoseConfig::default(),
            sparse_keep: 36,
            limited_deg: 120.0,
            limited_start: 0,
            ellipses: 6,
            seed: 0,
            holdout: 4,
            window: FilterWindow::Hann,
        }
    }
}

impl SimulateConfig {
    pub fn geometry(&self) -> ScanGeometry {
        let pix = unit_pixel_size(self.size);
        match self.beam {
            BeamMode::Parallel => ScanGeometry::parallel(self.views, self.detectors, self.size, pix),
            BeamMode::FanEquiangular => ScanGeometry::fan(self.views, self.detectors, self.size, pix),
        }
    }

    pub fn triplet_config(&self) -> TripletConfig {
        TripletConfig {
            dose: self.dose,
            sparse_keep: self.sparse_keep,
            limited_deg: self.limited_deg,
            limited_start: self.limited_start,
            window: self.window,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.phantoms == 0 {
            return Err(CtError::config("at least one phantom is required"));
        }
        if self.holdout > self.phantoms {
            return Err(CtError::config(format!(
                "holdout {} exceeds phantom count {}",
                self.holdout, self.phantoms
            )));
        }
        if self.ellipses == 0 {
            return Err(CtError::config("ellipse count must be >= 1"));
        }
        self.geometry().validate()?;
        // builds the masks, which checks keep and range against the geometry
        TripletBuilder::new(&self.geometry(), self.triplet_config()).map(|_| ())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config: SimulateConfig,
    pub geometry: ScanGeometry,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Serialize)]
struct SliceMeta {
    slice_id: String,
    mask_sv: ViewMask,
    mask_lv: ViewMask,
    dose: DoseConfig,
    phantom_seed: u64,
    noise_seed: u64,
    floored_bins: usize,
}

/// A triplet together with its clean reference image.
#[derive(Clone, Debug)]
pub struct Slice {
    pub triplet: TaskTriplet,
    pub clean: ImageGrid,
}

pub fn slice_name(i: usize) -> String {
    format!("slice_{i:04}")
}

/// Phantom and noise seeds of slice `i`.
pub fn slice_seeds(seed: u64, i: usize) -> (u64, u64) {
    (slice_seed(seed, 2 * i as u64), slice_seed(seed, 2 * i as u64 + 1))
}

/// Generate the slices of a dataset in memory. Parallel over slices; the
/// result does not depend on the thread count.
pub fn generate(cfg: &SimulateConfig) -> Result<Vec<Slice>> {
    cfg.validate()?;
    let geom = cfg.geometry();
    let builder = TripletBuilder::new(&geom, cfg.triplet_config())?;
    (0..cfg.phantoms)
        .into_par_iter()
        .map(|i| {
            let (phantom_seed, noise_seed) = slice_seeds(cfg.seed, i);
            let mut clean = random_ellipse_phantom(cfg.size, cfg.ellipses, phantom_seed);
            clean.data.mapv_inplace(|v| v as f32 as f64);
            let p = builder.full_projector().forward(&clean)?;
            let triplet = builder.build(&p, noise_seed, &slice_name(i))?;
            Ok(Slice { triplet, clean })
        })
        .collect()
}

/// Generate and write a dataset. Output goes to a sibling temporary
/// directory that is renamed into place only once complete.
pub fn simulate(cfg: &SimulateConfig, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    if out.exists() {
        let empty = fs::read_dir(out).map_err(|e| CtError::io(out, e))?.next().is_none();
        if !empty {
            return Err(CtError::io(
                out,
                std::io::Error::new(std::io::ErrorKind::AlreadyExists, "output directory is not empty"),
            ));
        }
    }
    let slices = generate(cfg)?;
    let mut staging = out.as_os_str().to_owned();
    staging.push(".partial");
    let staging = PathBuf::from(staging);
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| CtError::io(&staging, e))?;
    }
    let result = write_slices(cfg, &slices, &staging);
    match result {
        Ok(manifest) => {
            if out.exists() {
                fs::remove_dir(out).map_err(|e| CtError::io(out, e))?;
            }
            fs::rename(&staging, out).map_err(|e| CtError::io(out, e))?;
            Ok(manifest)
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            Err(e)
        }
    }
}

fn write_slices(cfg: &SimulateConfig, slices: &[Slice], dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| CtError::io(dir, e))?;
    let mut names = Vec::with_capacity(slices.len());
    for (i, s) in slices.iter().enumerate() {
        let t = &s.triplet;
        let sd = dir.join(&t.slice_id);
        fs::create_dir_all(&sd).map_err(|e| CtError::io(&sd, e))?;
        io::write_sinogram(&sd.join("ld.ctsg"), &t.p_ld)?;
        io::write_sinogram(&sd.join("sv.ctsg"), &t.p_sv)?;
        io::write_sinogram(&sd.join("lv.ctsg"), &t.p_lv)?;
        io::write_image(&sd.join("ld.ctim"), &t.mu_ld)?;
        io::write_image(&sd.join("sv.ctim"), &t.mu_sv)?;
        io::write_image(&sd.join("lv.ctim"), &t.mu_lv)?;
        io::write_image(&sd.join("phantom.ctim"), &s.clean)?;
        let (phantom_seed, noise_seed) = slice_seeds(cfg.seed, i);
        let meta = SliceMeta {
            slice_id: t.slice_id.clone(),
            mask_sv: t.mask_sv.clone(),
            mask_lv: t.mask_lv.clone(),
            dose: cfg.dose,
            phantom_seed,
            noise_seed,
            floored_bins: t.floored,
        };
        write_json(&sd.join("meta.json"), &meta)?;
        names.push(t.slice_id.clone());
    }
    let split = names.len() - cfg.holdout;
    let manifest = Manifest {
        version: 1,
        config: cfg.clone(),
        geometry: cfg.geometry(),
        test: names.split_off(split),
        train: names,
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    io::write_atomic(path, text.as_bytes())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| CtError::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| CtError::format(&path, e.to_string()))?;
    m.geometry.validate().map_err(|e| CtError::format(&path, e.to_string()))?;
    Ok(m)
}

/// Load one slice directory. The masks come from `meta.json` and must agree
/// with the sinogram shapes.
pub fn read_slice(dir: &Path) -> Result<Slice> {
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| CtError::io(&meta_path, e))?;
    let raw: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CtError::format(&meta_path, e.to_string()))?;
    let p_ld = io::read_sinogram(&dir.join("ld.ctsg"))?;
    let n_views = p_ld.geom.n_views;
    let mask = |key: &str| -> Result<ViewMask> {
        let v = raw
            .get(key)
            .ok_or_else(|| CtError::format(&meta_path, format!("missing {key}")))?;
        ViewMask::from_json(n_views, &v.to_string()).map_err(|e| CtError::format(&meta_path, e.to_string()))
    };
    let mask_sv = mask("mask_sv")?;
    let mask_lv = mask("mask_lv")?;
    let p_sv = io::read_sinogram(&dir.join("sv.ctsg"))?;
    let p_lv = io::read_sinogram(&dir.join("lv.ctsg"))?;
    if p_sv.geom.n_views != mask_sv.keep_count() || p_lv.geom.n_views != mask_lv.keep_count() {
        return Err(CtError::format(&meta_path, "mask sizes disagree with task sinograms"));
    }
    let slice_id = raw
        .get("slice_id")
        .and_then(|v| v.as_str())
        .map(str::to_string)
        .unwrap_or_else(|| dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
    let floored = raw.get("floored_bins").and_then(|v| v.as_u64()).unwrap_or(0) as usize;
    Ok(Slice {
        triplet: TaskTriplet {
            slice_id,
            mu_ld: io::read_image(&dir.join("ld.ctim"))?,
            mu_sv: io::read_image(&dir.join("sv.ctim"))?,
            mu_lv: io::read_image(&dir.join("lv.ctim"))?,
            p_ld,
            p_sv,
            p_lv,
            mask_sv,
            mask_lv,
            floored,
        },
        clean: io::read_image(&dir.join("phantom.ctim"))?,
    })
}

/// Load the named slices of a dataset directory.
pub fn read_split(dir: &Path, names: &[String]) -> Result<Vec<Slice>> {
    names.iter().map(|n| read_slice(&dir.join(n))).collect()
}
