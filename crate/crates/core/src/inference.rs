//! Loading trained models, single-slice reconstruction and test-split evaluation.

use std::path::Path;
use std::sync::Arc;

use crate::autodiff::ParamStore;
use crate::dataset::Slice;
use crate::error::Result;
use crate::metrics::{data_range, EvalRecord};
use crate::network::{reconstruct, ModelConfig, Task, TaskInput};
use crate::projector::{ImageGrid, Projector};
use crate::trainer::{load_checkpoint, CheckpointMeta};

/// Baseline label in evaluation reports.
pub const FBP_METHOD: &str = "fbp";

/// Subnetwork input for one task of a slice.
pub fn task_input(slice: &Slice, task: Task) -> Result<TaskInput> {
    let t = &slice.triplet;
    let full = &t.p_ld.geom;
    match task {
        Task::Fvct => TaskInput::new(task, &t.mu_ld, &t.p_ld, None, full),
        Task::Svct => TaskInput::new(task, &t.mu_sv, &t.p_sv, Some(&t.mask_sv), full),
        Task::Lvct => TaskInput::new(task, &t.mu_lv, &t.p_lv, Some(&t.mask_lv), full),
    }
}

/// A task's own FBP image.
pub fn fbp_image(slice: &Slice, task: Task) -> &ImageGrid {
    let t = &slice.triplet;
    match task {
        Task::Fvct => &t.mu_ld,
        Task::Svct => &t.mu_sv,
        Task::Lvct => &t.mu_lv,
    }
}

pub struct Model {
    pub store: ParamStore<f32>,
    pub config: ModelConfig,
    pub proj: Arc<Projector>,
}

impl Model {
    pub fn new(store: ParamStore<f32>, config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let proj = Arc::new(Projector::new(&config.geometry)?);
        Ok(Model { store, config, proj })
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointMeta)> {
        let (store, meta) = load_checkpoint(path)?;
        Ok((Model::new(store, meta.model.clone())?, meta))
    }

    /// Prior and output images for one task, in attenuation units.
    pub fn reconstruct(&self, slice: &Slice, task: Task) -> Result<(ImageGrid, ImageGrid)> {
        reconstruct(&self.store, &self.config, &self.proj, &task_input(slice, task)?)
    }

    /// PSNR/NMSE/SSIM of the FBP baseline and of the model output for every
    /// slice and trained task. `method` labels the model rows.
    pub fn evaluate(&self, slices: &[Slice], method: &str) -> Result<Vec<EvalRecord>> {
        let range = data_range(slices.iter().map(|s| &s.clean.data));
        let mut records = Vec::new();
        for task in self.config.ablation.tasks() {
            for s in slices {
                let id = &s.triplet.slice_id;
                let (_, out) = self.reconstruct(s, task)?;
                records.push(EvalRecord::compute(id, task.name(), FBP_METHOD, &fbp_image(s, task).data, &s.clean.data, range)?);
                records.push(EvalRecord::compute(id, task.name(), method, &out.data, &s.clean.data, range)?);
            }
        }
        Ok(records)
    }
}
