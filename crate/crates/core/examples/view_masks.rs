//! Sparse-view and limited-view masks on a 1152-view scan.

use ctml::geometry::{compact_geometry, make_limited_mask, make_sparse_mask};
use ctml::phantoms::unit_pixel_size;
use ctml::ScanGeometry;

fn main() -> ctml::Result<()> {
    let geom = ScanGeometry::parallel(1152, 736, 512, unit_pixel_size(512));
    let sparse = make_sparse_mask(&geom, 144)?;
    let limited = make_limited_mask(&geom, 120.0, 0)?;

    let kept = sparse.kept_indices();
    println!("sparse: {} views, stride {}", sparse.keep_count(), kept[1] - kept[0]);
    let lv = compact_geometry(&geom, &limited)?;
    println!(
        "limited: {} views from {:.1} to {:.1} degrees",
        limited.keep_count(),
        lv.view_angle(0),
        lv.view_angle(lv.n_views - 1)
    );
    println!("sparse mask json: {}...", &sparse.to_json()[..40]);
    Ok(())
}
