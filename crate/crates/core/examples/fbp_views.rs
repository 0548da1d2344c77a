//! Project a Shepp-Logan phantom and reconstruct it by FBP with 45, 144 and
//! 360 views. Writes windowed PNGs to the directory given as first argument.

use std::path::PathBuf;

use ctml::io::export_png;
use ctml::metrics::{data_range, psnr};
use ctml::phantoms::{shepp_logan, unit_pixel_size};
use ctml::{FilterWindow, Projector, ScanGeometry};

fn main() -> ctml::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fbp_views_out".into()));
    std::fs::create_dir_all(&out).map_err(|e| ctml::CtError::io(&out, e))?;
    let n = 128;
    let phantom = shepp_logan(n);
    let range = data_range([&phantom.data]);
    export_png(&phantom, (0.5, 1.2), &out.join("phantom.png"))?;

    for views in [45, 144, 360] {
        let proj = Projector::new(&ScanGeometry::parallel(views, 2 * n, n, unit_pixel_size(n)))?;
        let sino = proj.forward(&phantom)?;
        for window in [FilterWindow::RamLak, FilterWindow::Hann] {
            let rec = proj.fbp(&sino, window)?;
            println!("{views:3} views {window:?}: PSNR {:.2} dB", psnr(&rec.data, &phantom.data, range)?);
            if window == FilterWindow::Hann {
                export_png(&rec, (0.5, 1.2), &out.join(format!("fbp_{views}.png")))?;
            }
        }
    }
    Ok(())
}
