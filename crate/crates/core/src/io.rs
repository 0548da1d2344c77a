//! Binary sinogram (`.ctsg`) and image (`.ctim`) files, and windowed PNG export.
//!
//! Both formats are a 4-byte magic, a little-endian `u32` version, a `u32`
//! metadata length, that many bytes of JSON metadata, then the samples as
//! little-endian `f32` in row-major order.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{CtError, Result};
use crate::geometry::ScanGeometry;
use crate::projector::{ImageGrid, Sinogram};

pub const SINOGRAM_MAGIC: &[u8; 4] = b"CTSG";
pub const IMAGE_MAGIC: &[u8; 4] = b"CTIM";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 12;

#[derive(Serialize, Deserialize)]
struct SinogramMeta {
    rows: usize,
    cols: usize,
    geometry: ScanGeometry,
}

#[derive(Serialize, Deserialize)]
struct ImageMeta {
    rows: usize,
    cols: usize,
    pixel_size: f64,
}

/// Write `bytes` to `path` through a sibling temporary file, so readers never
/// observe a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    fs::write(tmp, bytes).map_err(|e| CtError::io(tmp, e))?;
    fs::rename(tmp, path).map_err(|e| CtError::io(path, e))
}

/// Assemble a container from a magic, JSON metadata and `f32` payload.
pub fn encode_container(magic: &[u8; 4], meta: &str, values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + meta.len() + 4 * values.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parse a container, checking magic, version and that the payload holds
/// exactly `values_of(meta)` samples. Returns the metadata text and samples.
pub fn decode_container(
    path: &Path,
    bytes: &[u8],
    magic: &[u8; 4],
    values_of: impl FnOnce(&str) -> Result<usize>,
) -> Result<(String, Vec<f32>)> {
    if bytes.len() < HEADER_LEN {
        return Err(CtError::Length {
            path: path.into(),
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    if &bytes[..4] != magic {
        return Err(CtError::format(
            path,
            format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&bytes[..4]),
                String::from_utf8_lossy(magic)
            ),
        ));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != FORMAT_VERSION {
        return Err(CtError::format(
            path,
            format!("unsupported version {version}, expected {FORMAT_VERSION}"),
        ));
    }
    let meta_len = word(8) as usize;
    let meta_end = HEADER_LEN + meta_len;
    if bytes.len() < meta_end {
        return Err(CtError::Length {
            path: path.into(),
            expected: meta_end,
            actual: bytes.len(),
        });
    }
    let meta = std::str::from_utf8(&bytes[HEADER_LEN..meta_end])
        .map_err(|e| CtError::format(path, format!("metadata is not UTF-8: {e}")))?
        .to_string();
    let count = values_of(&meta)?;
    let expected = meta_end + 4 * count;
    if bytes.len() != expected {
        return Err(CtError::Length {
            path: path.into(),
            expected,
            actual: bytes.len(),
        });
    }
    let values = bytes[meta_end..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((meta, values))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CtError::io(path, e))
}

fn parse_meta<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| CtError::format(path, format!("invalid metadata: {e}")))
}

fn to_f64(path: &Path, rows: usize, cols: usize, values: Vec<f32>) -> Result<Array2<f64>> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CtError::format(path, "payload contains non-finite values"));
    }
    Ok(Array2::from_shape_vec((rows, cols), values.into_iter().map(f64::from).collect())
        .expect("length checked against header"))
}

pub fn encode_sinogram(p: &Sinogram) -> Vec<u8> {
    let (rows, cols) = p.data.dim();
    let meta = serde_json::to_string(&SinogramMeta {
        rows,
        cols,
        geometry: p.geom.clone(),
    })
    .expect("metadata serializes");
    encode_container(SINOGRAM_MAGIC, &meta, &p.data.iter().map(|&v| v as f32).collect::<Vec<_>>())
}

pub fn write_sinogram(path: &Path, p: &Sinogram) -> Result<()> {
    write_atomic(path, &encode_sinogram(p))
}

pub fn decode_sinogram(path: &Path, bytes: &[u8]) -> Result<Sinogram> {
    let mut dims = (0, 0);
    let (meta, values) = decode_container(path, bytes, SINOGRAM_MAGIC, |m| {
        let meta: SinogramMeta = parse_meta(path, m)?;
        dims = (meta.rows, meta.cols);
        Ok(meta.rows * meta.cols)
    })?;
    let meta: SinogramMeta = parse_meta(path, &meta)?;
    meta.geometry
        .validate()
        .map_err(|e| CtError::format(path, e.to_string()))?;
    if meta.geometry.sinogram_shape() != dims {
        return Err(CtError::format(
            path,
            format!("shape {dims:?} disagrees with geometry {:?}", meta.geometry.sinogram_shape()),
        ));
    }
    Ok(Sinogram {
        data: to_f64(path, dims.0, dims.1, values)?,
        geom: meta.geometry,
    })
}

pub fn read_sinogram(path: &Path) -> Result<Sinogram> {
    decode_sinogram(path, &read_file(path)?)
}

pub fn encode_image(img: &ImageGrid) -> Vec<u8> {
    let (rows, cols) = img.data.dim();
    let meta = serde_json::to_string(&ImageMeta {
        rows,
        cols,
        pixel_size: img.pixel_size,
    })
    .expect("metadata serializes");
    encode_container(IMAGE_MAGIC, &meta, &img.data.iter().map(|&v| v as f32).collect::<Vec<_>>())
}

pub fn write_image(path: &Path, img: &ImageGrid) -> Result<()> {
    write_atomic(path, &encode_image(img))
}

pub fn decode_image(path: &Path, bytes: &[u8]) -> Result<ImageGrid> {
    let (meta, values) = decode_container(path, bytes, IMAGE_MAGIC, |m| {
        let meta: ImageMeta = parse_meta(path, m)?;
        Ok(meta.rows * meta.cols)
    })?;
    let meta: ImageMeta = parse_meta(path, &meta)?;
    if meta.rows != meta.cols || !(meta.pixel_size > 0.0) {
        return Err(CtError::format(
            path,
            format!("expected a square grid with pixel_size > 0, got {}x{} @ {}", meta.rows, meta.cols, meta.pixel_size),
        ));
    }
    Ok(ImageGrid {
        data: to_f64(path, meta.rows, meta.cols, values)?,
        pixel_size: meta.pixel_size,
    })
}

pub fn read_image(path: &Path) -> Result<ImageGrid> {
    decode_image(path, &read_file(path)?)
}

/// Attenuation treated as water by the display mapping.
pub const MU_WATER: f64 = 1.8;

/// Display window used for reconstructions, (center, width) in HU.
pub const DEFAULT_WINDOW: (f64, f64) = (40.0, 600.0);

/// Display-only affine map from phantom attenuation to Hounsfield-like units.
pub fn to_hu(mu: f64) -> f64 {
    1000.0 * (mu - MU_WATER) / MU_WATER
}

/// Linear window/level mapping of values to bytes, clamped to 0..=255.
pub fn window_bytes(values: impl IntoIterator<Item = f64>, center: f64, width: f64) -> Vec<u8> {
    let lo = center - 0.5 * width;
    values
        .into_iter()
        .map(|v| (((v - lo) / width).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// Save an 8-bit grayscale PNG with the given (center, width) window in HU.
pub fn export_png(img: &ImageGrid, window: (f64, f64), path: &Path) -> Result<()> {
    if !(window.1 > 0.0) {
        return Err(CtError::config(format!("window width must be > 0, got {}", window.1)));
    }
    let (rows, cols) = img.data.dim();
    let bytes = window_bytes(img.data.iter().map(|&v| to_hu(v)), window.0, window.1);
    save_gray(path, cols as u32, rows as u32, &bytes)
}

/// Save raw 8-bit grayscale pixels as PNG.
pub fn save_gray(path: &Path, width: u32, height: u32, pixels: &[u8]) -> Result<()> {
    image::save_buffer(path, pixels, width, height, image::ExtendedColorType::L8)
        .map_err(|e| CtError::io(path, std::io::Error::other(e)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantoms::{random_ellipse_phantom, unit_pixel_size};

    fn sample_sinogram() -> Sinogram {
        let g = ScanGeometry::parallel(12, 9, 8, unit_pixel_size(8));
        let data = Array2::from_shape_fn(g.sinogram_shape(), |(i, j)| (i as f64 * 0.37 - j as f64 * 0.11) as f32 as f64);
        Sinogram { data, geom: g }
    }

    #[test]
    fn sinogram_round_trip() {
        let p = sample_sinogram();
        let back = decode_sinogram(Path::new("x"), &encode_sinogram(&p)).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn image_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ctim");
        let mut img = random_ellipse_phantom(16, 4, 2);
        img.data.mapv_inplace(|v| v as f32 as f64);
        write_image(&path, &img).unwrap();
        assert_eq!(read_image(&path).unwrap(), img);
    }

    #[test]
    fn bad_magic_is_format_error() {
        let mut bytes = encode_sinogram(&sample_sinogram());
        bytes[0] = b'X';
        assert!(matches!(decode_sinogram(Path::new("x"), &bytes), Err(CtError::Format { .. })));
        // an image file is not a sinogram
        let img = encode_image(&ImageGrid::zeros(4, 0.5));
        assert!(matches!(decode_sinogram(Path::new("x"), &img), Err(CtError::Format { .. })));
    }

    #[test]
    fn wrong_version_is_format_error() {
        let mut bytes = encode_image(&ImageGrid::zeros(4, 0.5));
        bytes[4] = 9;
        assert!(matches!(decode_image(Path::new("x"), &bytes), Err(CtError::Format { .. })));
    }

    #[test]
    fn truncation_reports_byte_counts() {
        let bytes = encode_sinogram(&sample_sinogram());
        let full = bytes.len();
        for cut in [1, 4, 7] {
            match decode_sinogram(Path::new("x"), &bytes[..full - cut]) {
                Err(CtError::Length { expected, actual, .. }) => {
                    assert_eq!(expected, full);
                    assert_eq!(actual, full - cut);
                }
                other => panic!("expected length error, got {other:?}"),
            }
        }
        assert!(matches!(
            decode_sinogram(Path::new("x"), &bytes[..6]),
            Err(CtError::Length { expected: 12, actual: 6, .. })
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_sinogram(Path::new("x"), &long), Err(CtError::Length { .. })));
    }

    #[test]
    fn garbage_never_panics() {
        let mut state = 0x1234_5678u32;
        for len in 0..200 {
            let bytes: Vec<u8> = (0..len)
                .map(|_| {
                    state ^= state << 13;
                    state ^= state >> 17;
                    state ^= state << 5;
                    state as u8
                })
                .collect();
            assert!(decode_image(Path::new("x"), &bytes).is_err());
        }
    }

    #[test]
    fn window_mapping() {
        assert_eq!(window_bytes([40.0], 40.0, 600.0), vec![128]);
        assert_eq!(window_bytes([-1000.0, 5000.0], 40.0, 600.0), vec![0, 255]);
        // ramp from the floor to the ceiling in 5 steps: 0, 63.75, 127.5, 191.25, 255
        let ramp = [-260.0, -110.0, 40.0, 190.0, 340.0];
        assert_eq!(window_bytes(ramp, 40.0, 600.0), vec![0, 64, 128, 191, 255]);
    }

    #[test]
    fn png_export_constant_image() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.png");
        let mut img = ImageGrid::zeros(8, 0.25);
        img.data.fill(MU_WATER * (1.0 + 40.0 / 1000.0));
        export_png(&img, DEFAULT_WINDOW, &path).unwrap();
        let decoded = image::open(&path).unwrap().into_luma8();
        assert!(decoded.pixels().all(|p| (p.0[0] as i32 - 128).abs() <= 1));
    }
}
