//! The three task subnetworks: prior network, compensation with the
//! forward-projected prior, and the dual-domain module (sinogram U-net, FBP
//! layer, image U-net).

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Binding, ParamStore, Real, Shape, Tape, Tensor, Var};
use crate::degradation::slice_seed;
use crate::error::{CtError, Result};
use crate::geometry::{embed_full, ScanGeometry, ViewMask};
use crate::projector::{FilterWindow, ImageGrid, Projector, Sinogram};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Fvct,
    Svct,
    Lvct,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Fvct, Task::Svct, Task::Lvct];

    /// Parameter namespace.
    pub fn prefix(self) -> &'static str {
        match self {
            Task::Fvct => "ld/",
            Task::Svct => "sv/",
            Task::Lvct => "lv/",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Fvct => "fvct",
            Task::Svct => "svct",
            Task::Lvct => "lvct",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = CtError;
    fn from_str(s: &str) -> Result<Task> {
        match s.to_ascii_lowercase().as_str() {
            "fvct" | "ld" => Ok(Task::Fvct),
            "svct" | "sv" => Ok(Task::Svct),
            "lvct" | "lv" => Ok(Task::Lvct),
            other => Err(CtError::Usage(format!("unknown task {other:?} (expected fvct, svct or lvct)"))),
        }
    }
}

/// Training-graph variants: the full model and its ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    NoPnm,
    NoDdnm,
    NoFvct,
    NoSvct,
    NoLvct,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::Full,
        Ablation::NoPnm,
        Ablation::NoDdnm,
        Ablation::NoFvct,
        Ablation::NoSvct,
        Ablation::NoLvct,
    ];

    pub fn tasks(self) -> Vec<Task> {
        let dropped = match self {
            Ablation::NoFvct => Some(Task::Fvct),
            Ablation::NoSvct => Some(Task::Svct),
            Ablation::NoLvct => Some(Task::Lvct),
            _ => None,
        };
        Task::ALL.into_iter().filter(|t| Some(*t) != dropped).collect()
    }

    pub fn has_pnm(self) -> bool {
        self != Ablation::NoPnm
    }

    pub fn has_ddnm(self) -> bool {
        self != Ablation::NoDdnm
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoPnm => "no_pnm",
            Ablation::NoDdnm => "no_ddnm",
            Ablation::NoFvct => "no_fvct",
            Ablation::NoSvct => "no_svct",
            Ablation::NoLvct => "no_lvct",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = CtError;
    fn from_str(s: &str) -> Result<Ablation> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == key)
            .ok_or_else(|| CtError::config(format!("unknown ablation variant {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub stages: usize,
    pub base_channels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub residual: bool,
}

impl UNetConfig {
    pub fn validate(&self, h: usize, w: usize) -> Result<()> {
        if self.stages == 0 || self.base_channels == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(CtError::config(format!("invalid U-net configuration {self:?}")));
        }
        let f = 1usize << (self.stages - 1);
        if h % f != 0 || w % f != 0 {
            return Err(CtError::config(format!(
                "{h}x{w} input is not divisible by {f} as a {}-stage U-net requires",
                self.stages
            )));
        }
        if h / f < 2 || w / f < 2 {
            return Err(CtError::config(format!(
                "{h}x{w} input is too small for a {}-stage U-net",
                self.stages
            )));
        }
        Ok(())
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Every parameter as (name suffix, shape, fan-in); the head is last.
    pub fn param_specs(&self) -> Vec<(String, Shape, usize)> {
        let mut specs = Vec::new();
        let mut conv = |name: String, c_out: usize, c_in: usize, k: usize| {
            specs.push((format!("{name}.w"), [c_out, c_in, k, k], c_in * k * k));
            specs.push((format!("{name}.b"), [c_out, 1, 1, 1], c_in * k * k));
        };
        let mut c_in = self.in_channels;
        for l in 0..self.stages {
            let c = self.channels(l);
            conv(format!("enc{l}.conv0"), c, c_in, 3);
            conv(format!("enc{l}.conv1"), c, c, 3);
            c_in = c;
        }
        for l in (0..self.stages.saturating_sub(1)).rev() {
            let c = self.channels(l);
            conv(format!("dec{l}.conv0"), c, self.channels(l + 1) + c, 3);
            conv(format!("dec{l}.conv1"), c, c, 3);
        }
        conv("head".into(), self.out_channels, self.channels(0), 1);
        specs
    }
}

/// Sources of parameter leaves during graph construction.
pub trait ParamSource<T: Real> {
    fn param(&mut self, tape: &mut Tape<T>, name: &str) -> Result<Var>;
}

/// Parameters copied from a store and recorded for gradient collection.
pub struct Bound<'a, T> {
    pub store: &'a ParamStore<T>,
    pub binding: Binding,
}

impl<'a, T: Real> Bound<'a, T> {
    pub fn new(store: &'a ParamStore<T>) -> Self {
        Bound {
            store,
            binding: Binding::new(),
        }
    }
}

impl<T: Real> ParamSource<T> for Bound<'_, T> {
    fn param(&mut self, tape: &mut Tape<T>, name: &str) -> Result<Var> {
        self.binding.param(tape, self.store, name)
    }
}

/// Parameters already placed on the tape, looked up by name.
pub struct Placed(pub HashMap<String, Var>);

impl<T: Real> ParamSource<T> for Placed {
    fn param(&mut self, _tape: &mut Tape<T>, name: &str) -> Result<Var> {
        self.0
            .get(name)
            .copied()
            .ok_or_else(|| CtError::config(format!("unknown parameter {name}")))
    }
}

fn conv<T: Real>(tape: &mut Tape<T>, ps: &mut dyn ParamSource<T>, name: &str, x: Var, relu: bool) -> Result<Var> {
    let w = ps.param(tape, &format!("{name}.w"))?;
    let b = ps.param(tape, &format!("{name}.b"))?;
    let k = tape.shape(w)[2];
    let y = tape.conv2d(x, w, b, 1, k / 2)?;
    Ok(if relu { tape.relu(y) } else { y })
}

/// The U-net branch alone (no residual connection).
pub fn unet_branch<T: Real>(
    tape: &mut Tape<T>,
    ps: &mut dyn ParamSource<T>,
    cfg: &UNetConfig,
    prefix: &str,
    x: Var,
) -> Result<Var> {
    let [_, c, h, w] = tape.shape(x);
    if c != cfg.in_channels {
        return Err(CtError::dim(format!("{prefix}: {c} input channels, expected {}", cfg.in_channels)));
    }
    cfg.validate(h, w)?;
    let mut skips = Vec::new();
    let mut y = x;
    for l in 0..cfg.stages {
        if l > 0 {
            y = tape.downsample2(y)?;
        }
        y = conv(tape, ps, &format!("{prefix}enc{l}.conv0"), y, true)?;
        y = conv(tape, ps, &format!("{prefix}enc{l}.conv1"), y, true)?;
        skips.push(y);
    }
    skips.pop();
    for l in (0..cfg.stages - 1).rev() {
        let up = tape.upsample2(y);
        y = tape.concat_channels(up, skips[l])?;
        y = conv(tape, ps, &format!("{prefix}dec{l}.conv0"), y, true)?;
        y = conv(tape, ps, &format!("{prefix}dec{l}.conv1"), y, true)?;
    }
    conv(tape, ps, &format!("{prefix}head"), y, false)
}

/// `base + U-net(x)` when the configuration is residual, else `U-net(x)`.
pub fn unet_forward<T: Real>(
    tape: &mut Tape<T>,
    ps: &mut dyn ParamSource<T>,
    cfg: &UNetConfig,
    prefix: &str,
    x: Var,
    base: Var,
) -> Result<Var> {
    let branch = unet_branch(tape, ps, cfg, prefix, x)?;
    if cfg.residual {
        tape.add(base, branch)
    } else {
        Ok(branch)
    }
}

/// Affine map to roughly [-1, 1]: `(x - center) / scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub center: f64,
    pub scale: f64,
}

impl Normalizer {
    pub const IDENTITY: Normalizer = Normalizer { center: 0.0, scale: 1.0 };

    /// Center at the mean, scale by the largest deviation from it.
    pub fn fit<'a>(values: impl IntoIterator<Item = &'a f64> + Clone) -> Normalizer {
        let (sum, n) = values.clone().into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        let center = if n > 0 { sum / n as f64 } else { 0.0 };
        let scale = values.into_iter().fold(0.0f64, |m, v| m.max((v - center).abs()));
        Normalizer {
            center,
            scale: if scale > 0.0 { scale } else { 1.0 },
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.center) / self.scale
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * self.scale + self.center
    }

    pub fn forward_on<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Var {
        tape.scale_shift(x, 1.0 / self.scale, -self.center / self.scale)
    }

    pub fn inverse_on<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Var {
        tape.scale_shift(x, self.scale, self.center)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizers {
    pub image: Normalizer,
    pub sinogram: Normalizer,
}

/// Architecture shared by the three subnetworks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub stages: usize,
    pub base_channels: usize,
    pub residual: bool,
    pub window: FilterWindow,
    pub ablation: Ablation,
    /// Full-view geometry; every DDNM works on this grid.
    pub geometry: ScanGeometry,
    pub norm: Normalizers,
}

impl ModelConfig {
    pub fn unet(&self, in_channels: usize) -> UNetConfig {
        UNetConfig {
            stages: self.stages,
            base_channels: self.base_channels,
            in_channels,
            out_channels: 1,
            residual: self.residual,
        }
    }

    pub fn sinogram_in_channels(task: Task) -> usize {
        if task == Task::Fvct {
            2
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        let n = self.geometry.grid_size;
        let (v, d) = self.geometry.sinogram_shape();
        let cfg = self.unet(1);
        cfg.validate(n, n)?;
        if self.ablation.has_ddnm() {
            cfg.validate(v, d)
                .map_err(|e| CtError::config(format!("sinogram network: {e}")))?;
        }
        for n in [&self.norm.image, &self.norm.sinogram] {
            if !(n.scale > 0.0) || !n.scale.is_finite() || !n.center.is_finite() {
                return Err(CtError::config(format!("invalid normalizer {n:?}")));
            }
        }
        Ok(())
    }

    /// (network prefix, U-net config) of every network of `task` in this variant.
    pub fn networks(&self, task: Task) -> Vec<(String, UNetConfig)> {
        let p = task.prefix();
        let mut nets = Vec::new();
        if self.ablation.has_pnm() {
            nets.push((format!("{p}pnm/"), self.unet(1)));
        }
        if self.ablation.has_ddnm() {
            nets.push((format!("{p}sino/"), self.unet(Self::sinogram_in_channels(task))));
            nets.push((format!("{p}img/"), self.unet(1)));
        }
        nets
    }

    /// Seeded He-normal weights, zero biases, zero heads (so every residual
    /// network starts as the identity). Each tensor draws from its own stream
    /// keyed by name, so adding a network never shifts another's weights.
    pub fn init_params<T: Real>(&self, seed: u64) -> Result<ParamStore<T>> {
        self.validate()?;
        let mut store = ParamStore::new();
        for task in self.ablation.tasks() {
            for (prefix, cfg) in self.networks(task) {
                for (suffix, shape, fan_in) in cfg.param_specs() {
                    let name = format!("{prefix}{suffix}");
                    let n = shape.iter().product();
                    let zero = suffix.ends_with(".b") || suffix.starts_with("head");
                    let data = if zero {
                        vec![T::zero(); n]
                    } else {
                        let mut rng = ChaCha8Rng::seed_from_u64(slice_seed(seed, name_hash(&name)));
                        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
                        (0..n).map(|_| T::from_f64(normal.sample(&mut rng))).collect()
                    };
                    store.insert(&name, shape, data)?;
                }
            }
        }
        Ok(store)
    }
}

/// FNV-1a over the name bytes.
fn name_hash(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Everything a subnetwork reads for one slice.
#[derive(Clone, Debug)]
pub struct TaskInput {
    pub task: Task,
    /// The task's own FBP image.
    pub mu: ImageGrid,
    /// Measured sinogram on the full-view grid (missing rows are zero).
    pub p_full: Sinogram,
    /// Views missing for this task (`None` for the full-view task).
    pub mask: Option<ViewMask>,
}

impl TaskInput {
    /// Build from a task's compact sinogram and mask.
    pub fn new(task: Task, mu: &ImageGrid, p: &Sinogram, mask: Option<&ViewMask>, full: &ScanGeometry) -> Result<Self> {
        let p_full = match (task, mask) {
            (Task::Fvct, _) => p.clone(),
            (_, Some(m)) => embed_full(p, m, full)?,
            (_, None) => return Err(CtError::config(format!("{task} input needs a view mask"))),
        };
        if p_full.geom.sinogram_shape() != full.sinogram_shape() {
            return Err(CtError::dim(format!(
                "{task} sinogram {:?} does not match the full-view geometry {:?}",
                p_full.geom.sinogram_shape(),
                full.sinogram_shape()
            )));
        }
        Ok(TaskInput {
            task,
            mu: mu.clone(),
            p_full,
            mask: mask.cloned(),
        })
    }
}

/// Tape handles produced by one subnetwork forward.
#[derive(Clone, Copy, Debug)]
pub struct TaskVars {
    /// Normalized prior image.
    pub prior: Var,
    /// Normalized output image.
    pub out: Var,
    /// Compensated sinogram (physical units).
    pub p_tilde: Var,
}

fn image_tensor<T: Real>(img: &ImageGrid) -> Tensor<T> {
    let n = img.size();
    Tensor {
        shape: [1, 1, n, n],
        data: img.data.iter().map(|&v| T::from_f64(v)).collect(),
    }
}

fn sinogram_tensor<T: Real>(p: &Sinogram) -> Tensor<T> {
    let (v, d) = p.data.dim();
    Tensor {
        shape: [1, 1, v, d],
        data: p.data.iter().map(|&x| T::from_f64(x)).collect(),
    }
}

/// Prior image in normalized units: `μ + U-net(μ)`.
pub fn pnm_forward<T: Real>(
    tape: &mut Tape<T>,
    ps: &mut dyn ParamSource<T>,
    model: &ModelConfig,
    task: Task,
    mu_n: Var,
) -> Result<Var> {
    if !model.ablation.has_pnm() {
        return Ok(mu_n);
    }
    unet_forward(tape, ps, &model.unet(1), &format!("{}pnm/", task.prefix()), mu_n, mu_n)
}

/// Compensated sinogram and the forward-projected prior.
///
/// The full-view task concatenates `[A μ_prior, p]`; the others take `A μ_prior`
/// on missing views and the measurement everywhere else.
pub fn compensate<T: Real>(
    tape: &mut Tape<T>,
    proj: &Arc<Projector>,
    task: Task,
    p: Var,
    prior_phys: Var,
    mask: Option<&ViewMask>,
) -> Result<(Var, Var)> {
    let projected = tape.fp_layer(prior_phys, proj)?;
    let p_tilde = match task {
        Task::Fvct => tape.concat_channels(projected, p)?,
        Task::Svct | Task::Lvct => {
            let mask = mask.ok_or_else(|| CtError::Usage(format!("{task} compensation needs a view mask")))?;
            if mask.n_views() != tape.shape(p)[2] {
                return Err(CtError::dim(format!(
                    "mask over {} views, sinogram has {}",
                    mask.n_views(),
                    tape.shape(p)[2]
                )));
            }
            let missing: Vec<bool> = (0..mask.n_views()).map(|v| !mask.is_kept(v)).collect();
            tape.mask_blend(projected, p, &missing)?
        }
    };
    Ok((p_tilde, projected))
}

/// Dual-domain module: sinogram U-net, FBP layer, image U-net. Returns the
/// normalized output image.
///
/// The sinogram residual is taken on the measured content: `p̃` itself for
/// single-channel inputs, the measured channel `p` for the full-view task.
#[allow(clippy::too_many_arguments)]
pub fn ddnm_forward<T: Real>(
    tape: &mut Tape<T>,
    ps: &mut dyn ParamSource<T>,
    model: &ModelConfig,
    proj: &Arc<Projector>,
    task: Task,
    p_tilde: Var,
    measured: Var,
) -> Result<Var> {
    let sn = model.norm.sinogram;
    let p_tilde_n = sn.forward_on(tape, p_tilde);
    let base = if task == Task::Fvct {
        sn.forward_on(tape, measured)
    } else {
        p_tilde_n
    };
    let prefix = task.prefix();
    let cfg = model.unet(ModelConfig::sinogram_in_channels(task));
    let restored_n = unet_forward(tape, ps, &cfg, &format!("{prefix}sino/"), p_tilde_n, base)?;
    let restored = sn.inverse_on(tape, restored_n);
    let mu = tape.fbp_layer(restored, proj, model.window)?;
    let mu_n = model.norm.image.forward_on(tape, mu);
    unet_forward(tape, ps, &model.unet(1), &format!("{prefix}img/"), mu_n, mu_n)
}

/// Full subnetwork: prior network, compensation, dual-domain module.
pub fn subnetwork_forward<T: Real>(
    tape: &mut Tape<T>,
    ps: &mut dyn ParamSource<T>,
    model: &ModelConfig,
    proj: &Arc<Projector>,
    input: &TaskInput,
) -> Result<TaskVars> {
    let task = input.task;
    if input.mu.size() != model.geometry.grid_size {
        return Err(CtError::dim(format!(
            "{task} image is {}x{0}, model grid is {1}x{1}",
            input.mu.size(),
            model.geometry.grid_size
        )));
    }
    let mut mu_t = image_tensor::<T>(&input.mu);
    mu_t.data.iter_mut().for_each(|v| *v = T::from_f64(model.norm.image.apply(v.as_f64())));
    let mu_n = tape.constant(mu_t);
    let p = tape.constant(sinogram_tensor(&input.p_full));

    let prior = pnm_forward(tape, ps, model, task, mu_n)?;
    let prior_phys = model.norm.image.inverse_on(tape, prior);
    let (p_tilde, projected) = compensate(tape, proj, task, p, prior_phys, input.mask.as_ref())?;
    let out = if model.ablation.has_ddnm() {
        ddnm_forward(tape, ps, model, proj, task, p_tilde, p)?
    } else {
        // without learned dual-domain nets the output is the FBP of the
        // compensated data; the full-view task uses its projected prior
        let source = if task == Task::Fvct { projected } else { p_tilde };
        let mu = tape.fbp_layer(source, proj, model.window)?;
        model.norm.image.forward_on(tape, mu)
    };
    Ok(TaskVars { prior, out, p_tilde })
}

/// Inference for one task: (prior, output) images in physical units.
pub fn reconstruct<T: Real>(
    store: &ParamStore<T>,
    model: &ModelConfig,
    proj: &Arc<Projector>,
    input: &TaskInput,
) -> Result<(ImageGrid, ImageGrid)> {
    if !model.ablation.tasks().contains(&input.task) {
        return Err(CtError::config(format!(
            "model variant {} has no {} subnetwork",
            model.ablation, input.task
        )));
    }
    let mut tape = Tape::<T>::new();
    let mut ps = Bound::new(store);
    let vars = subnetwork_forward(&mut tape, &mut ps, model, proj, input)?;
    let to_image = |v: Var| -> ImageGrid {
        let n = model.geometry.grid_size;
        let data = tape.value(v).iter().map(|x| model.norm.image.invert(x.as_f64())).collect();
        ImageGrid {
            data: ndarray::Array2::from_shape_vec((n, n), data).expect("image-shaped output"),
            pixel_size: model.geometry.pixel_size,
        }
    };
    Ok((to_image(vars.prior), to_image(vars.out)))
}
