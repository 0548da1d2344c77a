//! Acceptance criteria 1-9. Prints one PASS/FAIL line per criterion.
//!
//! Set `CTML_ACCEPTANCE_SKIP_TRAINING=1` to skip the long training criteria
//! (5-7) while iterating; they are then reported as SKIP.

use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ctml::autodiff::{Tape, Tensor, Var};
use ctml::dataset::{generate, Slice, SimulateConfig};
use ctml::geometry::{compact_geometry, make_limited_mask, make_sparse_mask};
use ctml::inference::{Model, FBP_METHOD};
use ctml::metrics::{data_range, nmse, psnr, ssim, SsimParams};
use ctml::network::{Ablation, Task};
use ctml::phantoms::{shepp_logan, uniform_disk, unit_pixel_size};
use ctml::trainer::{checkpoint_path, loss_ml_out, loss_ml_prior, loss_rc, loss_total, mutual_loss, LossWeights, LogRow, TrainConfig, Trainer};
use ctml::verify::{adjoint_mismatch, primitives, subnetwork};
use ctml::{FilterWindow, Projector, ScanGeometry};

struct Report {
    lines: Vec<(usize, &'static str, String)>,
}

impl Report {
    fn record(&mut self, id: usize, ok: bool, detail: String) {
        let verdict = if ok { "PASS" } else { "FAIL" };
        println!("criterion {id}: {verdict} {detail}");
        self.lines.push((id, verdict, detail));
    }

    fn skip(&mut self, id: usize, why: &str) {
        println!("criterion {id}: SKIP {why}");
        self.lines.push((id, "SKIP", why.to_string()));
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn adjoint_identity(r: &mut Report) {
    let t0 = Instant::now();
    let n = 64;
    let geoms = [
        ScanGeometry::parallel(180, 96, n, unit_pixel_size(n)),
        ScanGeometry::fan(180, 96, n, unit_pixel_size(n)),
    ];
    let worst: Vec<f64> = geoms
        .iter()
        .enumerate()
        .map(|(i, g)| adjoint_mismatch(g, 100, 1000 + i as u64).unwrap())
        .collect();
    let elapsed = t0.elapsed();
    let ok = worst.iter().all(|w| *w < 1e-10) && elapsed < Duration::from_secs(120);
    r.record(
        1,
        ok,
        format!("worst mismatch parallel {:.2e}, fan {:.2e} (< 1e-10), {}", worst[0], worst[1], secs(elapsed)),
    );
}

fn gradient_fidelity(r: &mut Report) {
    let t0 = Instant::now();
    let p = primitives().unwrap();
    let s = subnetwork(true).unwrap();
    let elapsed = t0.elapsed();
    let ok = p.worst < 1e-6 && s.worst < 1e-4 && s.samples >= 50 && elapsed < Duration::from_secs(600);
    r.record(
        2,
        ok,
        format!(
            "primitives {:.2e} (< 1e-6), end-to-end {:.2e} over {} parameters (< 1e-4), {}",
            p.worst,
            s.worst,
            s.samples,
            secs(elapsed)
        ),
    );
}

fn fbp_sanity(r: &mut Report) {
    let n = 128;
    let phantom = shepp_logan(n);
    let range = data_range([&phantom.data]);
    let mut values = Vec::new();
    for views in [45, 144, 360] {
        let proj = Projector::new(&ScanGeometry::parallel(views, 2 * n, n, unit_pixel_size(n))).unwrap();
        let rec = proj.fbp(&proj.forward(&phantom).unwrap(), FilterWindow::Hann).unwrap();
        values.push(psnr(&rec.data, &phantom.data, range).unwrap());
    }
    let monotonic = values.windows(2).all(|w| w[1] > w[0]);

    // line integral through a disk of radius a at offset t: 2 sqrt(a^2 - t^2)
    let radius = 0.7;
    let geom = ScanGeometry::parallel(360, 2 * n, n, unit_pixel_size(n));
    let sino = Projector::new(&geom).unwrap().forward(&uniform_disk(n, radius, 1.0)).unwrap();
    let (mut err, mut norm) = (0.0, 0.0);
    for v in 0..geom.n_views {
        for k in 0..geom.n_detectors {
            let t: f64 = geom.detector_position(k);
            let chord = if t.abs() < radius { 2.0 * (radius * radius - t * t).sqrt() } else { 0.0 };
            err += (sino.data[[v, k]] - chord).powi(2);
            norm += chord * chord;
        }
    }
    let rel = (err / norm).sqrt();
    r.record(
        3,
        monotonic && rel < 2e-2,
        format!(
            "PSNR at 45/144/360 views {:.2}/{:.2}/{:.2} dB, disk chord relative RMS {:.2e} (< 2e-2)",
            values[0], values[1], values[2], rel
        ),
    );
}

fn geometry_fidelity(r: &mut Report) {
    let geom = ScanGeometry::parallel(1152, 736, 512, unit_pixel_size(512));
    let sparse = make_sparse_mask(&geom, 144).unwrap();
    let limited = make_limited_mask(&geom, 120.0, 0).unwrap();
    let even = sparse.kept_indices().iter().enumerate().all(|(i, &v)| v == 8 * i);
    let kept = limited.kept_indices();
    let contiguous = kept.windows(2).all(|w| w[1] == w[0] + 1);
    let span = compact_geometry(&geom, &limited).unwrap().angular_range.1;
    let ok = sparse.keep_count() == 144 && even && limited.keep_count() == 384 && contiguous && span == 120.0;
    r.record(
        4,
        ok,
        format!(
            "sparse {} views at stride 8: {even}; limited {} contiguous: {contiguous}, span {span} degrees",
            sparse.keep_count(),
            limited.keep_count()
        ),
    );
}

fn random_image(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn loss_identities(r: &mut Report) {
    let n = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut tape = Tape::<f64>::new();
    let leaf = |tape: &mut Tape<f64>, d: Vec<f64>| tape.leaf(Tensor::new([1, 1, n, n], d).unwrap(), true);
    let base = random_image(&mut rng, n);
    let same: Vec<Var> = (0..3).map(|_| leaf(&mut tape, base.clone())).collect();
    let zeros = [
        loss_ml_prior(&mut tape, same[0], same[1], same[2]).unwrap(),
        loss_ml_out(&mut tape, same[0], same[1], same[2]).unwrap(),
        loss_rc(&mut tape, same[0], same[1], same[2]).unwrap(),
    ];
    let all_zero = zeros.iter().all(|v| tape.scalar(*v) == 0.0);

    let imgs: Vec<Var> = (0..3).map(|_| leaf(&mut tape, random_image(&mut rng, n))).collect();
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let values: Vec<u64> = perms
        .iter()
        .map(|p| {
            let l = mutual_loss(&mut tape, &[imgs[p[0]], imgs[p[1]], imgs[p[2]]]).unwrap();
            tape.scalar(l).to_bits()
        })
        .collect();
    let symmetric = values.iter().all(|v| *v == values[0]);

    // consistency term on the full-view pair only; SV/LV outputs get no gradient
    let anchor = tape.constant(Tensor::new([1, 1, n, n], random_image(&mut rng, n)).unwrap());
    let outs: Vec<Var> = (0..3).map(|_| leaf(&mut tape, random_image(&mut rng, n))).collect();
    let pairs: Vec<(Var, Var)> = (0..3).map(|i| (imgs[i], outs[i])).collect();
    let total = loss_total(&mut tape, &pairs, 0, anchor, LossWeights::default()).unwrap();
    let g = tape.backward(total.rc).unwrap();
    let zero_grad = |v: Var| g.get(v).map_or(true, |d| d.iter().all(|x| *x == 0.0));
    let rc_ok = zero_grad(outs[1]) && zero_grad(outs[2]) && zero_grad(imgs[1]) && zero_grad(imgs[2]) && !zero_grad(outs[0]);

    r.record(
        8,
        all_zero && symmetric && rc_ok,
        format!("zero on identical inputs: {all_zero}; exact permutation symmetry: {symmetric}; SV/LV consistency gradient zero: {rc_ok}"),
    );
}

fn brute_psnr(x: &Array2<f64>, y: &Array2<f64>, range: f64) -> f64 {
    let mut s = 0.0;
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            s += (x[[i, j]] - y[[i, j]]).powi(2);
        }
    }
    10.0 * (range * range / (s / x.len() as f64)).log10()
}

fn brute_nmse(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let num: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - b).powi(2)).sum();
    num / y.iter().map(|b| b * b).sum::<f64>()
}

/// SSIM from explicit 11x11 Gaussian weights over every window fully inside the image.
fn brute_ssim(x: &Array2<f64>, y: &Array2<f64>, range: f64) -> f64 {
    let k = 11;
    let sigma: f64 = 1.5;
    let mut w = vec![vec![0.0; k]; k];
    let mut total = 0.0;
    for (i, row) in w.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    let (c1, c2) = ((0.01 * range).powi(2), (0.03 * range).powi(2));
    let mut acc = 0.0;
    let mut count = 0;
    for r in 0..=x.nrows() - k {
        for c in 0..=x.ncols() - k {
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let wt = w[i][j] / total;
                    mx += wt * x[[r + i, c + j]];
                    my += wt * y[[r + i, c + j]];
                }
            }
            let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let wt = w[i][j] / total;
                    let (a, b) = (x[[r + i, c + j]] - mx, y[[r + i, c + j]] - my);
                    vx += wt * a * a;
                    vy += wt * b * b;
                    cov += wt * a * b;
                }
            }
            acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    acc / count as f64
}

fn metric_oracles(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut dp, mut dn, mut ds) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let y = Array2::from_shape_fn((40, 40), |_| rng.gen::<f64>());
        let noise = rng.gen_range(0.01..0.3);
        let x = Array2::from_shape_fn((40, 40), |(i, j)| y[[i, j]] + noise * rng.gen_range(-1.0..1.0));
        let range = data_range([&y]);
        dp = dp.max((psnr(&x, &y, range).unwrap() - brute_psnr(&x, &y, range)).abs());
        dn = dn.max((nmse(&x, &y).unwrap() - brute_nmse(&x, &y)).abs());
        ds = ds.max((ssim(&x, &y, SsimParams::default(), range).unwrap() - brute_ssim(&x, &y, range)).abs());
    }
    r.record(
        9,
        dp < 1e-9 && dn < 1e-9 && ds < 1e-6,
        format!("max deviation PSNR {dp:.1e} (< 1e-9), NMSE {dn:.1e} (< 1e-9), SSIM {ds:.1e} (< 1e-6)"),
    );
}

const STEPS: usize = 2000;
const ABLATION_STEPS: usize = 500;
const REPLAY_STEPS: usize = 20;

fn toy_config() -> TrainConfig {
    TrainConfig { steps: STEPS, val_every: 100, checkpoint_every: REPLAY_STEPS, ..TrainConfig::toy() }
}

fn train_logged(train: &[Slice], val: &[Slice], cfg: TrainConfig, out: Option<&Path>) -> ctml::Result<(Trainer, Vec<LogRow>)> {
    let label = cfg.ablation.name();
    let mut t = Trainer::new(train, val, cfg)?;
    let t0 = Instant::now();
    let rows = t.run(out)?;
    for row in rows.iter().filter(|r| r.psnr.iter().any(|p| p.is_some())) {
        eprintln!("  [{label}] step {:5} L_total {:.5} psnr {:?}", row.step, row.total, row.psnr);
    }
    eprintln!("  [{label}] {} steps in {}", rows.len(), secs(t0.elapsed()));
    Ok((t, rows))
}

fn training_criteria(r: &mut Report) {
    let data = generate(&SimulateConfig::default()).unwrap();
    let (train, val) = data.split_at(32);
    let dir = tempfile::tempdir().unwrap();
    let t0 = Instant::now();
    let main = train_logged(train, val, toy_config(), Some(dir.path()));
    let elapsed = t0.elapsed();

    let (trainer, rows) = match main {
        Ok(v) => v,
        Err(e) => {
            r.record(5, false, format!("training aborted: {e}"));
            r.record(6, false, "no trained model".into());
            r.record(7, false, "no trained model".into());
            return;
        }
    };

    // 5: loss drop, finiteness, bitwise replay
    let at = |s: usize| rows.iter().find(|x| x.step == s).map(|x| x.total).unwrap_or(f64::NAN);
    let (l10, l500) = (at(10), at(500));
    let finite = rows.len() == STEPS && rows.iter().all(|x| x.total.is_finite());
    let mut replay = Trainer::new(train, val, toy_config()).unwrap();
    for _ in 0..REPLAY_STEPS {
        replay.train_step().unwrap();
    }
    let replay_path = dir.path().join("replay.ctpk");
    replay.save_checkpoint(&replay_path).unwrap();
    let identical = std::fs::read(&replay_path).unwrap() == std::fs::read(checkpoint_path(dir.path(), REPLAY_STEPS)).unwrap();
    r.record(
        5,
        l500 < 0.5 * l10 && finite && identical,
        format!(
            "L_total step 10 {l10:.5}, step 500 {l500:.5} (ratio {:.3} < 0.5); {} finite steps; replayed checkpoint bitwise identical: {identical}; {}",
            l500 / l10,
            rows.len(),
            secs(elapsed)
        ),
    );

    // 6: held-out gain over each task's own FBP
    let model = Model::new(trainer.store.clone(), trainer.model.clone()).unwrap();
    let records = model.evaluate(val, "ss-ctml").unwrap();
    let mean = |task: Task, method: &str| {
        let v: Vec<f64> = records
            .iter()
            .filter(|x| x.task == task.name() && x.method == method)
            .map(|x| x.psnr)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let gains: Vec<(Task, f64, f64)> = Task::ALL
        .iter()
        .map(|&t| (t, mean(t, FBP_METHOD), mean(t, "ss-ctml")))
        .collect();
    let need = |t: Task| if t == Task::Fvct { 1.0 } else { 3.0 };
    let ok6 = gains.iter().all(|(t, fbp, out)| out - fbp >= need(*t));
    let detail = gains
        .iter()
        .map(|(t, fbp, out)| format!("{t} {fbp:.2} -> {out:.2} dB ({:+.2}, need {:+.0})", out - fbp, need(*t)))
        .collect::<Vec<_>>()
        .join("; ");
    r.record(6, ok6, detail);

    // 7: ablations against the full model's LVCT PSNR at the same step
    let full_lv = rows
        .iter()
        .find(|x| x.step == ABLATION_STEPS)
        .and_then(|x| x.psnr[2])
        .unwrap_or(f64::NAN);
    let mut parts = vec![format!("full {full_lv:.2} dB")];
    let mut ok7 = full_lv.is_finite();
    for ablation in [Ablation::NoPnm, Ablation::NoDdnm, Ablation::NoFvct] {
        let cfg = TrainConfig { ablation, steps: ABLATION_STEPS, val_every: ABLATION_STEPS, checkpoint_every: 0, ..toy_config() };
        match train_logged(train, val, cfg, None) {
            Ok((_, rows)) => {
                let lv = rows.last().and_then(|x| x.psnr[2]).unwrap_or(f64::NAN);
                ok7 &= full_lv >= lv;
                parts.push(format!("{} {lv:.2} dB", ablation.name()));
            }
            Err(e) => {
                ok7 = false;
                parts.push(format!("{} aborted: {e}", ablation.name()));
            }
        }
    }
    r.record(7, ok7, format!("LVCT validation PSNR at step {ABLATION_STEPS}: {}", parts.join(", ")));
}

fn main() {
    let mut report = Report { lines: Vec::new() };
    adjoint_identity(&mut report);
    gradient_fidelity(&mut report);
    fbp_sanity(&mut report);
    geometry_fidelity(&mut report);
    if std::env::var_os("CTML_ACCEPTANCE_SKIP_TRAINING").is_some() {
        for id in 5..=7 {
            report.skip(id, "training criteria skipped by CTML_ACCEPTANCE_SKIP_TRAINING");
        }
    } else {
        training_criteria(&mut report);
    }
    loss_identities(&mut report);
    metric_oracles(&mut report);

    report.lines.sort_by_key(|l| l.0);
    let passed = report.lines.iter().filter(|l| l.1 == "PASS").count();
    println!("\nacceptance summary ({passed}/{} passed)", report.lines.len());
    for (id, verdict, detail) in &report.lines {
        println!("  {id}. {verdict:4} {detail}");
    }
}
