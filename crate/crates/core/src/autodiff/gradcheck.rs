//! Central finite-difference verification of tape gradients (double precision).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Outcome of one finite-difference comparison.
#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub worst_rel: f64,
    pub samples: usize,
}

/// Elementwise relative error. The denominator is floored at a small
/// fraction of the largest gradient magnitude seen, so entries that are
/// zero up to rounding do not dominate.
pub fn relative_errors(analytic: &[f64], numeric: &[f64]) -> Vec<f64> {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .collect()
}

/// A graph under test: builds its output from leaves holding `inputs`.
pub type Builder<'a> = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'a;

/// Scalar objective: the output itself if scalar, else its dot product with
/// a fixed random vector (so every output element carries weight).
fn objective(tape: &mut Tape<f64>, out: Var, probe: &Option<Vec<f64>>) -> Result<Var> {
    match probe {
        None => Ok(out),
        Some(r) => tape.dot(out, r.clone()),
    }
}

fn evaluate(inputs: &[Tensor<f64>], build: &Builder, probe: &Option<Vec<f64>>) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = build(&mut tape, &vars)?;
    let s = objective(&mut tape, out, probe)?;
    Ok(tape.scalar(s))
}

/// Compare the tape gradient of `build` against central differences on up to
/// `per_input` sampled entries of every input that is listed in `checked`.
pub fn check_graph(
    inputs: &[Tensor<f64>],
    checked: &[usize],
    build: &Builder,
    per_input: usize,
    seed: u64,
) -> Result<CheckOutcome> {
    check_graph_with_step(inputs, checked, build, per_input, seed, FD_STEP)
}

/// [`check_graph`] with an explicit difference step. Deep ReLU graphs need a
/// smaller step so that perturbations rarely cross an activation kink.
pub fn check_graph_with_step(
    inputs: &[Tensor<f64>],
    checked: &[usize],
    build: &Builder,
    per_input: usize,
    seed: u64,
    step: f64,
) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = build(&mut tape, &vars)?;
    let probe = (tape.value(out).len() != 1)
        .then(|| (0..tape.value(out).len()).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>());
    let s = objective(&mut tape, out, &probe)?;
    let grads = tape.backward(s)?;

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut work = inputs.to_vec();
    for &k in checked {
        let g = grads.get(vars[k]).expect("leaf requires grad").to_vec();
        let len = inputs[k].data.len();
        let picks: Vec<usize> = if len <= per_input {
            (0..len).collect()
        } else {
            (0..per_input).map(|_| rng.gen_range(0..len)).collect()
        };
        for i in picks {
            let orig = work[k].data[i];
            work[k].data[i] = orig + step;
            let up = evaluate(&work, build, &probe)?;
            work[k].data[i] = orig - step;
            let down = evaluate(&work, build, &probe)?;
            work[k].data[i] = orig;
            analytic.push(g[i]);
            numeric.push((up - down) / (2.0 * step));
        }
    }
    let worst_rel = relative_errors(&analytic, &numeric)
        .into_iter()
        .fold(0.0, f64::max);
    Ok(CheckOutcome {
        worst_rel,
        samples: analytic.len(),
    })
}

/// Random tensor with entries in ±[margin, margin + 1), keeping values away
/// from ReLU kinks.
pub fn random_tensor(shape: [usize; 4], margin: f64, rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = margin + rng.gen::<f64>();
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor { shape, data }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_gradient_passes_and_mismatch_is_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor([1, 1, 2, 2], 0.1, &mut rng);
        let ok = check_graph(
            &[x.clone(), Tensor::zeros([1, 1, 2, 2])],
            &[0],
            &|t, v| t.mse(v[0], v[1]),
            8,
            0,
        )
        .unwrap();
        assert!(ok.worst_rel < 1e-8, "{}", ok.worst_rel);
        let errs = relative_errors(&[1.0, 2.0], &[1.0, 2.2]);
        assert!(errs[1] > 0.05);
    }
}
