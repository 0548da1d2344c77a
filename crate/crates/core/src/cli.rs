//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::info;

use crate::dataset::{read_manifest, read_slice, read_split, simulate, SimulateConfig};
use crate::degradation::{DoseConfig, DEFAULT_I0};
use crate::error::{CtError, Result};
use crate::geometry::BeamMode;
use crate::inference::Model;
use crate::io::{export_png, write_image, DEFAULT_WINDOW};
use crate::metrics::{summarize, write_report};
use crate::network::{Ablation, Task};
use crate::trainer::{train, TrainConfig};
use crate::verify::run_suite;

#[derive(Parser, Debug)]
#[command(name = "ctml", version, about = "Cross-task mutual learning CT reconstruction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a phantom dataset of low-dose, sparse-view and limited-view triplets.
    Simulate {
        #[arg(long, default_value_t = 36)]
        phantoms: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 288)]
        views: usize,
        #[arg(long, default_value_t = 96)]
        detectors: usize,
        /// Dose fraction relative to the full-dose photon count.
        #[arg(long, default_value_t = 0.25)]
        dose: f64,
        /// Incident photons per detector bin at full dose.
        #[arg(long, default_value_t = DEFAULT_I0)]
        i0: f64,
        #[arg(long, default_value_t = 36)]
        sparse_keep: usize,
        #[arg(long, default_value_t = 120.0)]
        limited_deg: f64,
        #[arg(long, default_value_t = 0)]
        limited_start: usize,
        #[arg(long, default_value_t = 6)]
        ellipses: usize,
        /// Number of trailing slices held out as the test split.
        #[arg(long, default_value_t = 4)]
        holdout: usize,
        /// parallel or fan
        #[arg(long, default_value = "parallel")]
        beam: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the three subnetworks on a simulated dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Training configuration JSON; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configuration's variant (full, no-pnm, no-ddnm, no-fvct, no-svct, no-lvct).
        #[arg(long)]
        ablation: Option<Ablation>,
    },
    /// Reconstruct one slice with a trained checkpoint.
    Reconstruct {
        #[arg(long)]
        ckpt: PathBuf,
        /// Slice directory inside a dataset.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        task: Task,
        /// Output image, `.ctim` or `.png`.
        #[arg(long)]
        out: PathBuf,
        /// Additional windowed PNG of the output.
        #[arg(long)]
        png: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the dataset's test split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Run the finite-difference and adjoint verification suite.
    Gradcheck {
        /// Also check fan-beam geometry and every task.
        #[arg(long)]
        full: bool,
    },
}

fn parse_beam(s: &str) -> Result<BeamMode> {
    match s {
        "parallel" => Ok(BeamMode::Parallel),
        "fan" | "fan-equiangular" => Ok(BeamMode::FanEquiangular),
        other => Err(CtError::config(format!("unknown beam mode {other:?}; use parallel or fan"))),
    }
}

/// Apply `CTML_THREADS` to the global thread pool.
pub fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("CTML_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CtError::config(format!("CTML_THREADS must be a positive integer, got {v:?}")))?;
    // a pool that is already built (e.g. in tests) keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

enum ImageKind {
    Raw,
    Png,
}

fn image_kind(path: &Path) -> Result<ImageKind> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ctim") => Ok(ImageKind::Raw),
        Some("png") => Ok(ImageKind::Png),
        _ => Err(CtError::config(format!("{} must end in .ctim or .png", path.display()))),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Simulate {
            phantoms,
            size,
            views,
            detectors,
            dose,
            i0,
            sparse_keep,
            limited_deg,
            limited_start,
            ellipses,
            holdout,
            beam,
            seed,
            out,
        } => {
            let cfg = SimulateConfig {
                phantoms,
                size,
                views,
                detectors,
                beam: parse_beam(&beam)?,
                dose: DoseConfig { i0, dose_fraction: dose },
                sparse_keep,
                limited_deg,
                limited_start,
                ellipses,
                seed,
                holdout,
                ..SimulateConfig::default()
            };
            let m = simulate(&cfg, &out)?;
            info!("wrote {} training and {} test slices to {}", m.train.len(), m.test.len(), out.display());
        }
        Command::Train { data, config, out, ablation } => {
            let mut cfg = match config {
                Some(p) => TrainConfig::load(&p)?,
                None => TrainConfig::default(),
            };
            if let Some(a) = ablation {
                cfg.ablation = a;
            }
            let (trainer, rows) = train(&data, cfg, &out)?;
            if let Some(last) = rows.last() {
                info!("finished {} steps, L_total {:.6}", trainer.step, last.total);
            }
        }
        Command::Reconstruct { ckpt, input, task, out, png } => {
            let kind = image_kind(&out)?;
            let (model, _) = Model::load(&ckpt)?;
            let slice = read_slice(&input)?;
            let (_, img) = model.reconstruct(&slice, task)?;
            match kind {
                ImageKind::Raw => write_image(&out, &img)?,
                ImageKind::Png => export_png(&img, DEFAULT_WINDOW, &out)?,
            }
            if let Some(p) = png {
                export_png(&img, DEFAULT_WINDOW, &p)?;
            }
        }
        Command::Eval { ckpt, data, report } => {
            let (model, meta) = Model::load(&ckpt)?;
            let manifest = read_manifest(&data)?;
            if manifest.geometry != model.config.geometry {
                return Err(CtError::config("checkpoint and dataset geometries differ"));
            }
            let slices = read_split(&data, &manifest.test)?;
            if slices.is_empty() {
                return Err(CtError::config("dataset has no test slices"));
            }
            let method = match meta.train.ablation {
                Ablation::Full => "ss-ctml",
                a => a.name(),
            };
            let records = model.evaluate(&slices, method)?;
            write_report(&report, &records)?;
            for (task, method, p, n, s) in summarize(&records) {
                println!("{task:5} {method:8} PSNR {p}  NMSE {n}  SSIM {s}");
            }
        }
        Command::Gradcheck { full } => {
            let mut failed = Vec::new();
            for c in run_suite(full)? {
                let verdict = if c.passed() { "ok" } else { "FAILED" };
                println!(
                    "{:24} worst relative error {:.3e} (tolerance {:.0e}, {} samples) {verdict}",
                    c.name, c.worst, c.tol, c.samples
                );
                if !c.passed() {
                    failed.push(c.name);
                }
            }
            if !failed.is_empty() {
                return Err(CtError::Numerical(format!("gradient check failed: {}", failed.join(", "))));
            }
        }
    }
    Ok(())
}

/// Parse arguments, run, and map errors to exit codes.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
