//! Parameter counts and short-run losses for every model variant.

use ctml::dataset::{generate, SimulateConfig};
use ctml::network::Ablation;
use ctml::trainer::{TrainConfig, Trainer};

fn main() -> ctml::Result<()> {
    let slices = generate(&SimulateConfig { phantoms: 4, holdout: 1, ..SimulateConfig::default() })?;
    let (train, val) = slices.split_at(3);
    for ablation in [
        Ablation::Full,
        Ablation::NoPnm,
        Ablation::NoDdnm,
        Ablation::NoFvct,
        Ablation::NoSvct,
        Ablation::NoLvct,
    ] {
        let cfg = TrainConfig { ablation, steps: 5, base_channels: 4, val_every: 5, ..TrainConfig::toy() };
        let mut t = Trainer::new(train, val, cfg)?;
        let rows = t.run(None)?;
        let last = rows.last().expect("five steps");
        println!(
            "{:8} {:8} params  L_total {:.5}  lvct PSNR {:?}",
            ablation.name(),
            t.store.scalar_count(),
            last.total,
            last.psnr[2]
        );
    }
    Ok(())
}
