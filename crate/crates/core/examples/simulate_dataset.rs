//! Write a small dataset to disk and read a slice back.

use std::path::PathBuf;

use ctml::dataset::{read_manifest, read_slice, simulate, SimulateConfig};

fn main() -> ctml::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "toy_dataset".into()));
    let cfg = SimulateConfig { phantoms: 6, holdout: 2, ..SimulateConfig::default() };
    simulate(&cfg, &out)?;

    let m = read_manifest(&out)?;
    println!("train {:?}\ntest  {:?}", m.train, m.test);
    let s = read_slice(&out.join(&m.test[0]))?;
    let t = &s.triplet;
    println!(
        "{}: ld {:?}, sv {:?}, lv {:?}, {} floored bins",
        t.slice_id,
        t.p_ld.data.dim(),
        t.p_sv.data.dim(),
        t.p_lv.data.dim(),
        t.floored
    );
    Ok(())
}
