//! Equiangular fan-beam projection, adjoint check and reconstruction.

use ctml::metrics::{data_range, psnr};
use ctml::phantoms::{shepp_logan, unit_pixel_size};
use ctml::{FilterWindow, Projector, ScanGeometry};

fn main() -> ctml::Result<()> {
    let n = 96;
    let geom = ScanGeometry::fan(360, 192, n, unit_pixel_size(n));
    let proj = Projector::new(&geom)?;
    println!("{} non-zeros in the system matrix", proj.nnz());

    let phantom = shepp_logan(n);
    let sino = proj.forward(&phantom)?;
    let back = proj.adjoint(&sino)?;
    // <Ax, Ax> and <x, A^T A x> agree to rounding
    let lhs: f64 = sino.data.iter().map(|v| v * v).sum();
    let rhs: f64 = phantom.data.iter().zip(back.data.iter()).map(|(a, b)| a * b).sum();
    println!("adjoint mismatch {:.2e}", (lhs - rhs).abs() / lhs);

    let rec = proj.fbp(&sino, FilterWindow::Hann)?;
    println!("fan-beam FBP PSNR {:.2} dB", psnr(&rec.data, &phantom.data, data_range([&phantom.data]))?);
    Ok(())
}
