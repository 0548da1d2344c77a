//! Build a small graph on the tape, differentiate it, and compare against
//! central differences.

use ctml::autodiff::gradcheck::{check_graph, random_tensor};
use ctml::autodiff::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ctml::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = random_tensor([1, 2, 8, 8], 0.0, &mut rng);
    let w = random_tensor([3, 2, 3, 3], 0.0, &mut rng);
    let b = random_tensor([3, 1, 1, 1], 0.0, &mut rng);

    let mut tape = Tape::<f64>::new();
    let xv = tape.leaf(x.clone(), false);
    let wv = tape.leaf(w.clone(), true);
    let bv = tape.leaf(b.clone(), true);
    let y = tape.conv2d(xv, wv, bv, 1, 1)?;
    let y = tape.relu(y);
    let y = tape.downsample2(y)?;
    let target = tape.constant(Tensor::zeros(tape.shape(y)));
    let loss = tape.mse(y, target)?;
    let grads = tape.backward(loss)?;
    println!("loss {:.6}, |dL/db| = {:?}", tape.scalar(loss), grads.get(bv).unwrap());

    let outcome = check_graph(
        &[x, w, b],
        &[1, 2],
        &|t, v| {
            let y = t.conv2d(v[0], v[1], v[2], 1, 1)?;
            let y = t.relu(y);
            let y = t.downsample2(y)?;
            let z = t.constant(Tensor::zeros(t.shape(y)));
            t.mse(y, z)
        },
        20,
        1,
    )?;
    println!("worst relative error {:.2e} over {} entries", outcome.worst_rel, outcome.samples);
    Ok(())
}
