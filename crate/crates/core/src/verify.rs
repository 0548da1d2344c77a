//! Finite-difference and adjoint verification suite behind `ctml gradcheck`.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::gradcheck::{check_graph_with_step, random_tensor, Builder, FD_STEP};
use crate::autodiff::{Tensor, Var};
use crate::degradation::{DoseConfig, TripletBuilder, TripletConfig};
use crate::error::Result;
use crate::geometry::ScanGeometry;
use crate::network::{
    subnetwork_forward, Ablation, ModelConfig, Normalizer, Normalizers, Placed, Task, TaskInput,
};
use crate::phantoms::{random_ellipse_phantom, unit_pixel_size};
use crate::projector::{FilterWindow, Projector};

pub const PRIMITIVE_TOL: f64 = 1e-6;
pub const ADJOINT_TOL: f64 = 1e-10;
pub const LAYER_TOL: f64 = 1e-5;
pub const END_TO_END_TOL: f64 = 1e-4;

/// Worst error seen in one category of checks.
#[derive(Clone, Debug)]
pub struct Category {
    pub name: &'static str,
    pub worst: f64,
    pub tol: f64,
    pub samples: usize,
}

impl Category {
    pub fn passed(&self) -> bool {
        self.worst < self.tol
    }
}

fn fold(name: &'static str, tol: f64, results: impl IntoIterator<Item = Result<(f64, usize)>>) -> Result<Category> {
    let mut c = Category { name, worst: 0.0, tol, samples: 0 };
    for r in results {
        let (w, n) = r?;
        c.worst = c.worst.max(w);
        c.samples += n;
    }
    Ok(c)
}

/// Difference step for the end-to-end check.
pub const DEEP_FD_STEP: f64 = 1e-6;

fn check_step(inputs: &[Tensor<f64>], build: &Builder, per_input: usize, seed: u64, step: f64) -> Result<(f64, usize)> {
    let all: Vec<usize> = (0..inputs.len()).collect();
    let o = check_graph_with_step(inputs, &all, build, per_input, seed, step)?;
    Ok((o.worst_rel, o.samples))
}

fn check(inputs: &[Tensor<f64>], build: &Builder, per_input: usize, seed: u64) -> Result<(f64, usize)> {
    check_step(inputs, build, per_input, seed, FD_STEP)
}

/// Every tape primitive on small random inputs.
pub fn primitives() -> Result<Category> {
    let mut r = ChaCha8Rng::seed_from_u64(100);
    let x = random_tensor([2, 2, 4, 6], 0.05, &mut r);
    let y = random_tensor([2, 2, 4, 6], 0.05, &mut r);
    let z = random_tensor([2, 1, 4, 6], 0.05, &mut r);
    let img = random_tensor([1, 2, 6, 5], 0.0, &mut r);
    let w = random_tensor([3, 2, 3, 3], 0.0, &mut r);
    let b = random_tensor([3, 1, 1, 1], 0.0, &mut r);
    let probe: Vec<f64> = (0..x.data.len()).map(|_| r.gen_range(-1.0..1.0)).collect();
    let missing = [true, false, false, true];
    let conv = |stride: usize| move |t: &mut crate::autodiff::Tape<f64>, v: &[Var]| t.conv2d(v[0], v[1], v[2], stride, 1);
    let xy = [x.clone(), y.clone()];
    let results = vec![
        check(&[img.clone(), w.clone(), b.clone()], &conv(1), 40, 1),
        check(&[img, w, b], &conv(2), 40, 2),
        check(&[x.clone()], &|t, v| Ok(t.relu(v[0])), 40, 3),
        check(&xy, &|t, v| t.add(v[0], v[1]), 40, 4),
        check(&[x.clone(), z], &|t, v| t.concat_channels(v[0], v[1]), 40, 5),
        check(&[x.clone()], &|t, v| t.downsample2(v[0]), 40, 6),
        check(&[x.clone()], &|t, v| Ok(t.upsample2(v[0])), 40, 7),
        check(&[x.clone()], &|t, v| Ok(t.scale_shift(v[0], -1.7, 0.4)), 40, 8),
        check(&xy, &|t, v| t.mask_blend(v[0], v[1], &missing), 40, 9),
        check(&xy, &|t, v| t.mse(v[0], v[1]), 40, 10),
        check(&[x], &|t, v| t.dot(v[0], probe.clone()), 40, 11),
        check(
            &xy,
            &|t, v| {
                let a = t.mse(v[0], v[1])?;
                let b = t.dot(v[1], probe.clone())?;
                t.weighted_sum(&[(a, 0.3), (b, -2.0)])
            },
            40,
            12,
        ),
    ];
    fold("primitives", PRIMITIVE_TOL, results)
}

/// Worst normalized adjoint mismatch |<Ax,y> - <x,A^T y>| / (|Ax| |y|) over
/// `pairs` random (image, sinogram) pairs.
pub fn adjoint_mismatch(geom: &ScanGeometry, pairs: usize, seed: u64) -> Result<f64> {
    let proj = Projector::new(geom)?;
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut ax = vec![0.0; proj.sinogram_len()];
    let mut aty = vec![0.0; proj.image_len()];
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let x: Vec<f64> = (0..proj.image_len()).map(|_| r.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..proj.sinogram_len()).map(|_| r.gen_range(-1.0..1.0)).collect();
        proj.forward_raw(&x, &mut ax);
        proj.adjoint_raw(&y, &mut aty);
        let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
        let norm = ax.iter().map(|v| v * v).sum::<f64>().sqrt() * y.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max((lhs - rhs).abs() / norm);
    }
    Ok(worst)
}

fn geometries(n: usize, views: usize, det: usize, full: bool) -> Vec<ScanGeometry> {
    let mut g = vec![ScanGeometry::parallel(views, det, n, unit_pixel_size(n))];
    if full {
        g.push(ScanGeometry::fan(views, det, n, unit_pixel_size(n)));
    }
    g
}

pub fn adjoint(full: bool) -> Result<Category> {
    let (n, pairs) = if full { (64, 20) } else { (32, 10) };
    let results = geometries(n, 2 * n, 3 * n / 2, full)
        .iter()
        .enumerate()
        .map(|(i, g)| adjoint_mismatch(g, pairs, 200 + i as u64).map(|w| (w, pairs)))
        .collect::<Vec<_>>();
    fold("adjoint identity", ADJOINT_TOL, results)
}

/// Forward-projection and FBP layers.
pub fn projector_layers(full: bool) -> Result<Category> {
    let mut results = Vec::new();
    for (i, g) in geometries(8, 10, 14, full).iter().enumerate() {
        let proj = Arc::new(Projector::new(g)?);
        let mut r = ChaCha8Rng::seed_from_u64(300 + i as u64);
        let img = random_tensor([1, 2, 8, 8], 0.0, &mut r);
        let sino = random_tensor([1, 2, 10, 14], 0.0, &mut r);
        results.push(check(&[img], &|t, v| t.fp_layer(v[0], &proj), 40, 1));
        for window in [FilterWindow::RamLak, FilterWindow::Hann] {
            results.push(check(&[sino.clone()], &|t, v| t.fbp_layer(v[0], &proj, window), 40, 2));
        }
    }
    fold("projector layers", LAYER_TOL, results)
}

/// A 2-stage, 2-channel subnetwork at 32x32 with randomized weights,
/// differentiated end to end with respect to its parameters.
pub fn subnetwork(full: bool) -> Result<Category> {
    let tasks: &[Task] = if full { &Task::ALL } else { &[Task::Svct] };
    let mut results = Vec::new();
    for (gi, geom) in geometries(32, 24, 24, full).into_iter().enumerate() {
        let builder = TripletBuilder::new(
            &geom,
            TripletConfig {
                dose: DoseConfig::default(),
                sparse_keep: 6,
                limited_deg: 120.0,
                limited_start: 0,
                window: FilterWindow::Hann,
            },
        )?;
        let clean = random_ellipse_phantom(32, 4, 7);
        let p = builder.full_projector().forward(&clean)?;
        let t = builder.build(&p, 9, "check")?;
        let model = ModelConfig {
            stages: 2,
            base_channels: 2,
            residual: true,
            window: FilterWindow::Hann,
            ablation: Ablation::Full,
            geometry: geom.clone(),
            norm: Normalizers {
                image: Normalizer::fit(t.mu_ld.data.iter()),
                sinogram: Normalizer::fit(t.p_ld.data.iter()),
            },
        };
        let proj = Arc::new(Projector::new(&geom)?);
        let mut store = model.init_params::<f64>(5)?;
        let mut r = ChaCha8Rng::seed_from_u64(400 + gi as u64);
        // zero heads and biases would hide most of the graph
        for i in 0..store.len() {
            store.values_mut(i).iter_mut().for_each(|v| *v += r.gen_range(-0.1..0.1));
        }
        for &task in tasks {
            let input = match task {
                Task::Fvct => TaskInput::new(task, &t.mu_ld, &t.p_ld, None, &geom)?,
                Task::Svct => TaskInput::new(task, &t.mu_sv, &t.p_sv, Some(&t.mask_sv), &geom)?,
                Task::Lvct => TaskInput::new(task, &t.mu_lv, &t.p_lv, Some(&t.mask_lv), &geom)?,
            };
            let names: Vec<String> = store
                .names()
                .iter()
                .filter(|n| n.starts_with(task.prefix()))
                .cloned()
                .collect();
            let inputs: Vec<Tensor<f64>> = names
                .iter()
                .map(|n| {
                    let i = store.index_of(n).expect("listed name");
                    Tensor { shape: store.shape(i), data: store.values(i).to_vec() }
                })
                .collect();
            let build = |tape: &mut crate::autodiff::Tape<f64>, vars: &[Var]| {
                let placed: HashMap<String, Var> = names.iter().cloned().zip(vars.iter().copied()).collect();
                let out = subnetwork_forward(tape, &mut Placed(placed), &model, &proj, &input)?;
                let a = tape.mse(out.prior, out.out)?;
                let b = tape.dot(out.out, (0..32 * 32).map(|k| ((k * 37 % 101) as f64) / 50.0 - 1.0).collect())?;
                tape.weighted_sum(&[(a, 1.0), (b, 1.0)])
            };
            results.push(check_step(&inputs, &build, 2, 500 + gi as u64, DEEP_FD_STEP));
        }
    }
    fold("end-to-end subnetwork", END_TO_END_TOL, results)
}

/// The whole suite; `full` adds fan-beam geometry and all three tasks.
pub fn run_suite(full: bool) -> Result<Vec<Category>> {
    Ok(vec![primitives()?, adjoint(full)?, projector_layers(full)?, subnetwork(full)?])
}
