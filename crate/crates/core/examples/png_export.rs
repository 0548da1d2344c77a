use ctml::io::{export_png, read_image, write_image, DEFAULT_WINDOW};
use ctml::phantoms::shepp_logan;

/// Round-trip an image through the binary format and export a windowed PNG.
fn main() -> ctml::Result<()> {
    let dir = std::env::temp_dir().join("ctml_png_export");
    std::fs::create_dir_all(&dir).map_err(|e| ctml::CtError::io(&dir, e))?;
    let img = shepp_logan(128);
    write_image(&dir.join("phantom.ctim"), &img)?;
    let back = read_image(&dir.join("phantom.ctim"))?;
    println!("max abs round-trip error {:.2e}", img.data.iter().zip(back.data.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    export_png(&back, DEFAULT_WINDOW, &dir.join("phantom.png"))?;
    println!("wrote {}", dir.join("phantom.png").display());
    Ok(())
}
