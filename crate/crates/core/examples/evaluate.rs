//! Train briefly, then compare each task's output with its FBP baseline on
//! held-out slices and write the report CSV.

use std::path::PathBuf;

use ctml::dataset::{generate, SimulateConfig};
use ctml::inference::Model;
use ctml::metrics::{summarize, write_report};
use ctml::trainer::{TrainConfig, Trainer};

fn main() -> ctml::Result<()> {
    let report = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "report.csv".into()));
    let slices = generate(&SimulateConfig { phantoms: 8, holdout: 2, ..SimulateConfig::default() })?;
    let (train, test) = slices.split_at(6);
    let mut trainer = Trainer::new(train, test, TrainConfig { steps: 40, base_channels: 4, val_every: 0, ..TrainConfig::toy() })?;
    trainer.run(None)?;

    let model = Model::new(trainer.store, trainer.model)?;
    let records = model.evaluate(test, "ss-ctml")?;
    write_report(&report, &records)?;
    for (task, method, p, n, s) in summarize(&records) {
        println!("{task} {method:8} PSNR {p}  NMSE {n}  SSIM {s}");
    }
    Ok(())
}
