//! Error-map output: exact float values plus a colormapped preview.

use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb};

use super::ErrorMap;
use crate::data::write_slice;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Anchors of a dark-to-bright perceptual ramp.
const RAMP: [[f64; 3]; 5] = [
    [0.0, 0.0, 4.0],
    [87.0, 16.0, 110.0],
    [188.0, 55.0, 84.0],
    [249.0, 142.0, 9.0],
    [252.0, 255.0, 164.0],
];

/// Color for `t` in `[0, 1]`; values outside are clamped.
pub fn colormap(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 1.0 };
    let x = t * (RAMP.len() - 1) as f64;
    let i = (x as usize).min(RAMP.len() - 2);
    let f = x - i as f64;
    let mut out = [0u8; 3];
    for (c, o) in out.iter_mut().enumerate() {
        *o = (RAMP[i][c] + f * (RAMP[i + 1][c] - RAMP[i][c])).round() as u8;
    }
    out
}

/// Writes `<dir>/<stem>_relerr.nii` (float32 values) and
/// `<dir>/<stem>_relerr.png` (preview, relative error 0..=1 mapped onto the
/// ramp, masked pixels black). Returns both paths.
pub fn write_error_map<T: Scalar>(dir: &Path, stem: &str, map: &ErrorMap<T>) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let raw = dir.join(format!("{stem}_relerr.nii"));
    write_slice(&raw, &map.values)?;
    let (w, h) = (map.values.width(), map.values.height());
    let img = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        if map.mask[i] {
            Rgb(colormap(map.values.data()[i].to_f64_lossy()))
        } else {
            Rgb([0, 0, 0])
        }
    });
    let preview = dir.join(format!("{stem}_relerr.png"));
    img.save(&preview)
        .map_err(|e| Error::Format(format!("{}: {e}", preview.display())))?;
    Ok((raw, preview))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{load_slice, Domain, Grid};

    #[test]
    fn ramp_endpoints() {
        assert_eq!(colormap(0.0), [0, 0, 4]);
        assert_eq!(colormap(1.0), [252, 255, 164]);
        assert_eq!(colormap(7.0), colormap(1.0));
        assert_eq!(colormap(-1.0), colormap(0.0));
    }

    #[test]
    fn raw_map_is_lossless() {
        let values = Grid::new(3, 2, vec![0.0f32, 0.25, 1.5, 0.0, 0.125, 3.0]).unwrap();
        let map = ErrorMap {
            values: values.clone(),
            mask: vec![false, true, true, false, true, true],
            epsilon: 1e-6,
        };
        let dir = tempfile::tempdir().unwrap();
        let (raw, preview) = write_error_map(dir.path(), "s01_t1_to_t2", &map).unwrap();
        assert!(preview.exists());
        let back = load_slice::<f32>(&raw, None, Domain::T2, "s01").unwrap();
        assert_eq!(back.pixels(), &values);
    }
}
