//! Joint training of the three subnetworks against each other.
//!
//! Every step builds one tape per task (run in parallel), combines their
//! prior and output images in a small loss tape, and seeds each task tape
//! with the loss gradients of its own images. Gradients are then reduced in
//! task order, so results do not depend on scheduling.

mod adam;
mod loss;
pub mod plot;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{loss_ml_out, loss_ml_prior, loss_rc, loss_total, mutual_loss, LossVars, LossWeights};

use crate::autodiff::{Binding, ParamStore, Tape, Tensor, Var};
use crate::dataset::{read_manifest, read_split, Slice};
use crate::error::{CtError, Result};
use crate::inference::task_input;
use crate::io::write_atomic;
use crate::metrics::{data_range, psnr};
use crate::network::{
    reconstruct, subnetwork_forward, Ablation, Bound, ModelConfig, Normalizer, Normalizers, Task, TaskInput,
};
use crate::projector::{FilterWindow, Projector};

/// Training configuration, read from JSON. Missing fields take defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub steps: usize,
    /// Slices per step.
    pub batch: usize,
    pub seed: u64,
    pub ablation: Ablation,
    pub loss_weights: LossWeights,
    pub stages: usize,
    pub base_channels: usize,
    pub window: FilterWindow,
    /// Validation PSNR is logged every this many steps (0 = never).
    pub val_every: usize,
    /// Checkpoints are written every this many steps (0 = only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-5,
            adam_beta1: 0.5,
            adam_beta2: 0.9,
            adam_eps: 1e-8,
            steps: 1000,
            batch: 1,
            seed: 0,
            ablation: Ablation::Full,
            loss_weights: LossWeights::default(),
            stages: 5,
            base_channels: 8,
            window: FilterWindow::Hann,
            val_every: 50,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// Settings for the 64×64 toy benchmark.
    pub fn toy() -> Self {
        TrainConfig {
            lr: 1e-3,
            steps: 2000,
            ..TrainConfig::default()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam().validate()?;
        self.loss_weights.validate()?;
        if self.batch == 0 {
            return Err(CtError::config("batch must be >= 1"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig =
            serde_json::from_str(text).map_err(|e| CtError::config(format!("invalid training config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CtError::io(path, e))?;
        Self::from_json(&text)
    }
}

/// One metrics-log row. PSNR columns are present on validation steps for
/// tasks the variant trains.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub ml_prior: f64,
    pub ml_out: f64,
    pub rc: f64,
    pub total: f64,
    pub psnr: [Option<f64>; 3],
}

pub const LOG_HEADER: &str = "step,L_ml_prior,L_ml_out,L_rc,L_total,psnr_fvct,psnr_svct,psnr_lvct";

pub fn format_log(rows: &[LogRow]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{},{},{},{},{}", r.step, r.ml_prior, r.ml_out, r.rc, r.total);
        for p in r.psnr {
            match p {
                Some(v) => {
                    let _ = write!(out, ",{v}");
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

/// Prepared subnetwork inputs for one slice, indexed like [`Task::ALL`].
#[derive(Clone, Debug)]
pub struct SliceInputs {
    pub inputs: [TaskInput; 3],
    pub clean: crate::projector::ImageGrid,
}

impl SliceInputs {
    pub fn new(slice: &Slice) -> Result<Self> {
        Ok(SliceInputs {
            inputs: [
                task_input(slice, Task::Fvct)?,
                task_input(slice, Task::Svct)?,
                task_input(slice, Task::Lvct)?,
            ],
            clean: slice.clean.clone(),
        })
    }

    pub fn get(&self, task: Task) -> &TaskInput {
        &self.inputs[task_index(task)]
    }
}

pub fn task_index(task: Task) -> usize {
    match task {
        Task::Fvct => 0,
        Task::Svct => 1,
        Task::Lvct => 2,
    }
}

/// Normalizers fitted on the training slices' low-dose FBP images and sinograms.
pub fn fit_normalizers(train: &[Slice]) -> Normalizers {
    Normalizers {
        image: Normalizer::fit(train.iter().flat_map(|s| s.triplet.mu_ld.data.iter())),
        sinogram: Normalizer::fit(train.iter().flat_map(|s| s.triplet.p_ld.data.iter())),
    }
}

/// Checkpoint metadata stored next to the parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub step: usize,
}

/// Load a checkpoint written by [`Trainer`].
pub fn load_checkpoint(path: &Path) -> Result<(ParamStore<f32>, CheckpointMeta)> {
    let (store, extra) = ParamStore::<f32>::load(path)?;
    let meta: CheckpointMeta = serde_json::from_value(extra)
        .map_err(|e| CtError::format(path, format!("checkpoint metadata: {e}")))?;
    Ok((store, meta))
}

/// State of a training run.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: ModelConfig,
    pub store: ParamStore<f32>,
    pub adam: AdamState<f32>,
    pub proj: Arc<Projector>,
    pub step: usize,
    train: Vec<SliceInputs>,
    val: Vec<SliceInputs>,
    val_range: f64,
    rng: ChaCha8Rng,
}

/// Per-step diagnostics used when a step produces non-finite values.
fn diagnostics(step: usize, loss: [f64; 4], norms: &[(Task, f64)]) -> String {
    let mut s = format!(
        "step {step}: L_ml_prior={} L_ml_out={} L_rc={} L_total={}; gradient norms:",
        loss[0], loss[1], loss[2], loss[3]
    );
    for (t, n) in norms {
        let _ = write!(s, " {t}={n}");
    }
    s
}

impl Trainer {
    pub fn new(train: &[Slice], val: &[Slice], cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let first = train
            .first()
            .ok_or_else(|| CtError::config("training set is empty"))?;
        let geometry = first.triplet.p_ld.geom.clone();
        let model = ModelConfig {
            stages: cfg.stages,
            base_channels: cfg.base_channels,
            residual: true,
            window: cfg.window,
            ablation: cfg.ablation,
            geometry: geometry.clone(),
            norm: fit_normalizers(train),
        };
        model.validate()?;
        let store = model.init_params::<f32>(cfg.seed)?;
        let prep = |s: &[Slice]| s.iter().map(SliceInputs::new).collect::<Result<Vec<_>>>();
        let val_inputs = prep(val)?;
        let val_range = data_range(val.iter().map(|s| &s.clean.data));
        Ok(Trainer {
            adam: AdamState::new(&store),
            proj: Arc::new(Projector::new(&geometry)?),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_0F_BA7C4),
            train: prep(train)?,
            val: val_inputs,
            val_range,
            step: 0,
            cfg,
            model,
            store,
        })
    }

    /// Load the dataset splits from a directory written by `simulate`.
    pub fn from_dataset(dir: &Path, cfg: TrainConfig) -> Result<Self> {
        let manifest = read_manifest(dir)?;
        let train = read_split(dir, &manifest.train)?;
        let val = read_split(dir, &manifest.test)?;
        Trainer::new(&train, &val, cfg)
    }

    pub fn checkpoint_meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            model: self.model.clone(),
            train: self.cfg.clone(),
            step: self.step,
        }
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let extra = serde_json::to_value(self.checkpoint_meta()).expect("metadata serializes");
        self.store.save(path, &extra)
    }

    /// Losses and parameter gradients for one slice, weights scaled by `scale`.
    fn slice_gradients(&self, sample: &SliceInputs, scale: f64) -> Result<([f64; 4], Vec<Vec<f32>>, Vec<(Task, f64)>)> {
        let tasks = self.cfg.ablation.tasks();
        let forwards: Vec<(Tape<f32>, Binding, crate::network::TaskVars)> = tasks
            .par_iter()
            .map(|&task| {
                let mut tape = Tape::new();
                let mut ps = Bound::new(&self.store);
                let vars = subnetwork_forward(&mut tape, &mut ps, &self.model, &self.proj, sample.get(task))?;
                Ok((tape, ps.binding, vars))
            })
            .collect::<Result<_>>()?;

        // loss tape over copies of the task images
        let mut head = Tape::<f32>::new();
        let mut pairs = Vec::new();
        for (tape, _, vars) in &forwards {
            let p = head.leaf(tape.tensor(vars.prior), true);
            let o = head.leaf(tape.tensor(vars.out), true);
            pairs.push((p, o));
        }
        // consistency anchors to the full-view task, or the sparse-view task
        // when the full-view task is dropped
        let anchor_task = if tasks.contains(&Task::Fvct) { Task::Fvct } else { Task::Svct };
        let anchor_index = tasks.iter().position(|t| *t == anchor_task).expect("anchor task present");
        let mu = &sample.get(anchor_task).mu;
        let n = mu.size();
        let anchor_data = mu.data.iter().map(|&v| self.model.norm.image.apply(v) as f32).collect();
        let anchor = head.constant(Tensor::new([1, 1, n, n], anchor_data)?);
        let w = self.cfg.loss_weights;
        let scaled = LossWeights {
            prior: w.prior * scale,
            out: w.out * scale,
            rc: w.rc * scale,
        };
        let lv = loss_total(&mut head, &pairs, anchor_index, anchor, scaled)?;
        let values = [
            head.scalar(lv.ml_prior) as f64,
            head.scalar(lv.ml_out) as f64,
            head.scalar(lv.rc) as f64,
            head.scalar(lv.total) as f64 / scale,
        ];
        let head_grads = head.backward(lv.total)?;

        let per_task: Vec<Vec<Vec<f32>>> = forwards
            .par_iter()
            .zip(pairs.par_iter())
            .map(|((tape, binding, vars), (p, o))| {
                let gp = head_grads_clone(&head_grads, *p);
                let go = head_grads_clone(&head_grads, *o);
                let grads = tape.backward_from(&[(vars.prior, gp), (vars.out, go)])?;
                let mut full = self.store.zeros_like();
                binding.accumulate(&grads, &mut full);
                Ok(full)
            })
            .collect::<Result<_>>()?;

        let mut total = self.store.zeros_like();
        let mut norms = Vec::new();
        for (task, g) in tasks.iter().zip(&per_task) {
            let mut sq = 0.0f64;
            for (t, s) in total.iter_mut().zip(g) {
                for (a, b) in t.iter_mut().zip(s) {
                    *a += *b;
                    sq += (*b as f64) * (*b as f64);
                }
            }
            norms.push((*task, sq.sqrt()));
        }
        Ok((values, total, norms))
    }

    /// One optimizer step over a sampled batch. Returns the logged losses.
    pub fn train_step(&mut self) -> Result<LogRow> {
        let batch = self.cfg.batch;
        let picks: Vec<usize> = (0..batch).map(|_| self.rng.gen_range(0..self.train.len())).collect();
        let scale = 1.0 / batch as f64;
        let mut sum_loss = [0.0; 4];
        let mut grads = self.store.zeros_like();
        let mut norms: Vec<(Task, f64)> = Vec::new();
        for &i in &picks {
            let (values, g, n) = self.slice_gradients(&self.train[i], scale)?;
            for k in 0..4 {
                sum_loss[k] += values[k] * scale;
            }
            for (a, b) in grads.iter_mut().zip(&g) {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += *y);
            }
            norms = n;
        }
        let step = self.step + 1;
        let finite_grads = grads.iter().flatten().all(|v| v.is_finite());
        if !sum_loss.iter().all(|v| v.is_finite()) || !finite_grads {
            return Err(CtError::Numerical(diagnostics(step, sum_loss, &norms)));
        }
        adam_step(&mut self.store, &grads, &mut self.adam, &self.cfg.adam())?;
        if self.store.names().iter().enumerate().any(|(i, _)| !self.store.values(i).iter().all(|v| v.is_finite())) {
            return Err(CtError::Numerical(format!(
                "non-finite parameters after update; {}",
                diagnostics(step, sum_loss, &norms)
            )));
        }
        self.step = step;
        Ok(LogRow {
            step,
            ml_prior: sum_loss[0],
            ml_out: sum_loss[1],
            rc: sum_loss[2],
            total: sum_loss[3],
            psnr: [None; 3],
        })
    }

    /// Mean output PSNR per task over the validation slices.
    pub fn validate(&self) -> Result<[Option<f64>; 3]> {
        let mut out = [None; 3];
        if self.val.is_empty() {
            return Ok(out);
        }
        for task in self.cfg.ablation.tasks() {
            let mut sum = 0.0;
            for s in &self.val {
                let (_, img) = reconstruct(&self.store, &self.model, &self.proj, s.get(task))?;
                let p = psnr(&img.data, &s.clean.data, self.val_range)?;
                if p.is_nan() {
                    return Err(CtError::Numerical(format!("validation PSNR for {task} is NaN")));
                }
                sum += p;
            }
            out[task_index(task)] = Some(sum / self.val.len() as f64);
        }
        Ok(out)
    }

    /// Run the remaining steps, logging and checkpointing into `out` if given.
    pub fn run(&mut self, out: Option<&Path>) -> Result<Vec<LogRow>> {
        if let Some(dir) = out {
            std::fs::create_dir_all(dir).map_err(|e| CtError::io(dir, e))?;
        }
        let mut rows = Vec::new();
        let result = self.run_inner(out, &mut rows);
        if let Some(dir) = out {
            // the log is written even when training aborts
            write_atomic(&dir.join("metrics.csv"), format_log(&rows).as_bytes())?;
            if !rows.is_empty() {
                save_loss_curve(&dir.join("loss_curve.png"), &rows)?;
            }
        }
        result.map(|_| rows)
    }

    fn run_inner(&mut self, out: Option<&Path>, rows: &mut Vec<LogRow>) -> Result<()> {
        while self.step < self.cfg.steps {
            let mut row = self.train_step()?;
            let s = row.step;
            if self.cfg.val_every > 0 && (s % self.cfg.val_every == 0 || s == self.cfg.steps) {
                row.psnr = self.validate()?;
                info!(
                    "step {s}: L_total={:.5} psnr={:?}",
                    row.total,
                    row.psnr.map(|p| p.map(|v| (v * 100.0).round() / 100.0))
                );
            }
            rows.push(row);
            if let Some(dir) = out {
                if self.cfg.checkpoint_every > 0 && s % self.cfg.checkpoint_every == 0 {
                    self.save_checkpoint(&checkpoint_path(dir, s))?;
                }
            }
        }
        if let Some(dir) = out {
            self.save_checkpoint(&dir.join(FINAL_CHECKPOINT))?;
        }
        Ok(())
    }
}

fn head_grads_clone(g: &crate::autodiff::Grads<f32>, v: Var) -> Vec<f32> {
    g.get(v).map(<[f32]>::to_vec).unwrap_or_default()
}

pub const FINAL_CHECKPOINT: &str = "model.ctpk";

pub fn checkpoint_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("ckpt_{step:06}.ctpk"))
}

/// Loss components over steps (log scale): prior, output, consistency, total.
pub fn save_loss_curve(path: &Path, rows: &[LogRow]) -> Result<()> {
    let series: Vec<Vec<(f64, f64)>> = [
        |r: &LogRow| r.ml_prior,
        |r: &LogRow| r.ml_out,
        |r: &LogRow| r.rc,
        |r: &LogRow| r.total,
    ]
    .iter()
    .map(|f| rows.iter().map(|r| (r.step as f64, f(r))).collect())
    .collect();
    plot::save_line_chart(path, &series, true)
}

/// Convenience wrapper: load a dataset, train, write outputs to `out`.
pub fn train(dataset: &Path, cfg: TrainConfig, out: &Path) -> Result<(Trainer, Vec<LogRow>)> {
    let mut trainer = Trainer::from_dataset(dataset, cfg)?;
    let rows = trainer.run(Some(out))?;
    Ok((trainer, rows))
}
