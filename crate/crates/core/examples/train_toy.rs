//! Short joint training run on an in-memory toy set, logging losses and
//! validation PSNR. Pass an output directory to also get checkpoints,
//! metrics.csv and loss_curve.png.

use std::path::PathBuf;

use ctml::dataset::{generate, SimulateConfig};
use ctml::trainer::{TrainConfig, Trainer};

fn main() -> ctml::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from);
    let slices = generate(&SimulateConfig { phantoms: 10, holdout: 2, ..SimulateConfig::default() })?;
    let (train, val) = slices.split_at(8);

    let cfg = TrainConfig { steps: 60, base_channels: 4, val_every: 20, checkpoint_every: 30, ..TrainConfig::toy() };
    let mut trainer = Trainer::new(train, val, cfg)?;
    println!("{} parameters", trainer.store.scalar_count());
    for row in trainer.run(out.as_deref())? {
        if row.step % 10 == 0 {
            println!("step {:3}  L_total {:.5}  psnr {:?}", row.step, row.total, row.psnr);
        }
    }
    Ok(())
}
