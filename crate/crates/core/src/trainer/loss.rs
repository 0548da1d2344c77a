//! Mutual-learning and reconstruction-consistency losses (mean squared error).

use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tape, Var};
use crate::error::{CtError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub prior: f64,
    pub out: f64,
    pub rc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            prior: 1.0,
            out: 1.0,
            rc: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for w in [self.prior, self.out, self.rc] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(CtError::config(format!("loss weights must be finite and >= 0, got {self:?}")));
            }
        }
        Ok(())
    }
}

/// Sum of the pairwise MSE terms over every pair of `images` (three terms
/// for three tasks, one for two).
pub fn mutual_loss<T: Real>(tape: &mut Tape<T>, images: &[Var]) -> Result<Var> {
    if images.len() < 2 {
        return Err(CtError::Usage(format!("mutual loss needs >= 2 images, got {}", images.len())));
    }
    let mut terms = Vec::new();
    for i in 0..images.len() {
        for j in i + 1..images.len() {
            terms.push((tape.mse(images[i], images[j])?, 1.0));
        }
    }
    // summing in value order makes the result exactly independent of image order
    terms.sort_by(|a, b| tape.scalar(a.0).as_f64().total_cmp(&tape.scalar(b.0).as_f64()));
    tape.weighted_sum(&terms)
}

/// Mutual loss among the three prior images.
pub fn loss_ml_prior<T: Real>(tape: &mut Tape<T>, ld: Var, sv: Var, lv: Var) -> Result<Var> {
    mutual_loss(tape, &[ld, sv, lv])
}

/// Mutual loss among the three output images.
pub fn loss_ml_out<T: Real>(tape: &mut Tape<T>, ld: Var, sv: Var, lv: Var) -> Result<Var> {
    mutual_loss(tape, &[ld, sv, lv])
}

/// Consistency of the anchor task's prior and output with its own FBP input.
/// Only the anchor task enters; the other tasks have no consistency term.
pub fn loss_rc<T: Real>(tape: &mut Tape<T>, prior: Var, out: Var, anchor: Var) -> Result<Var> {
    let a = tape.mse(prior, anchor)?;
    let b = tape.mse(out, anchor)?;
    tape.weighted_sum(&[(a, 1.0), (b, 1.0)])
}

/// Handles to the loss components on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub ml_prior: Var,
    pub ml_out: Var,
    pub rc: Var,
    pub total: Var,
}

/// Weighted total over the given task (prior, output) pairs. `anchor_index`
/// selects which pair the consistency term uses.
pub fn loss_total<T: Real>(
    tape: &mut Tape<T>,
    pairs: &[(Var, Var)],
    anchor_index: usize,
    anchor: Var,
    weights: LossWeights,
) -> Result<LossVars> {
    let priors: Vec<Var> = pairs.iter().map(|p| p.0).collect();
    let outs: Vec<Var> = pairs.iter().map(|p| p.1).collect();
    let ml_prior = mutual_loss(tape, &priors)?;
    let ml_out = mutual_loss(tape, &outs)?;
    let (p, o) = pairs
        .get(anchor_index)
        .copied()
        .ok_or_else(|| CtError::Usage(format!("anchor index {anchor_index} out of range")))?;
    let rc = loss_rc(tape, p, o, anchor)?;
    let total = tape.weighted_sum(&[(ml_prior, weights.prior), (ml_out, weights.out), (rc, weights.rc)])?;
    Ok(LossVars {
        ml_prior,
        ml_out,
        rc,
        total,
    })
}
