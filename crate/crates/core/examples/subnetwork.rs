//! One task subnetwork at initialization: the prior equals the FBP input and
//! the output equals the FBP of the compensated sinogram.

use std::sync::Arc;

use ctml::degradation::{DoseConfig, TripletBuilder, TripletConfig};
use ctml::network::{reconstruct, Ablation, ModelConfig, Normalizer, Normalizers, Task, TaskInput};
use ctml::phantoms::{random_ellipse_phantom, unit_pixel_size};
use ctml::{FilterWindow, Projector, ScanGeometry};

fn main() -> ctml::Result<()> {
    let n = 64;
    let geom = ScanGeometry::parallel(288, 96, n, unit_pixel_size(n));
    let builder = TripletBuilder::new(
        &geom,
        TripletConfig {
            dose: DoseConfig::default(),
            sparse_keep: 36,
            limited_deg: 120.0,
            limited_start: 0,
            window: FilterWindow::Hann,
        },
    )?;
    let p = builder.full_projector().forward(&random_ellipse_phantom(n, 6, 1))?;
    let t = builder.build(&p, 2, "demo")?;

    let model = ModelConfig {
        stages: 5,
        base_channels: 8,
        residual: true,
        window: FilterWindow::Hann,
        ablation: Ablation::Full,
        geometry: geom.clone(),
        norm: Normalizers {
            image: Normalizer::fit(t.mu_ld.data.iter()),
            sinogram: Normalizer::fit(t.p_ld.data.iter()),
        },
    };
    let store = model.init_params::<f32>(0)?;
    for task in Task::ALL {
        println!("{task}: {} parameters", store.count_with_prefix(task.prefix()));
    }

    let proj = Arc::new(Projector::new(&geom)?);
    let input = TaskInput::new(Task::Lvct, &t.mu_lv, &t.p_lv, Some(&t.mask_lv), &geom)?;
    let (prior, out) = reconstruct(&store, &model, &proj, &input)?;
    let diff = prior.data.iter().zip(t.mu_lv.data.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("limited-view prior vs FBP input: max difference {diff:.2e}");
    println!("output range {:.3} .. {:.3}", out.data.fold(f64::MAX, |a, b| a.min(*b)), out.data.fold(f64::MIN, |a, b| a.max(*b)));
    Ok(())
}
