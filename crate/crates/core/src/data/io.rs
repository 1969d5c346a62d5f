//! Volume and slice file IO.
//!
//! NIfTI-1 (`.nii`, `.nii.gz`) volumes go through the `nifti` crate; 2-D
//! grayscale PNG/TIFF files load as single-plane volumes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma};
use nifti::writer::WriterOptions;
use nifti::{IntoNdArray, NiftiObject, ReaderOptions};

use crate::data::{Domain, Grid, ImageSlice, PairedDataset, Split};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Axial slice used when the volume is deep enough.
pub const DEFAULT_SLICE_INDEX: usize = 120;

/// PNG encoding of normalized intensities: `level = (v + OFFSET) * SCALE`.
const PNG_OFFSET: f64 = 8.0;
const PNG_SCALE: f64 = 4096.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VolumeFormat {
    Nifti,
    Png,
    Tiff,
}

impl VolumeFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        let name = path.file_name()?.to_str()?.to_ascii_lowercase();
        if name.ends_with(".nii") || name.ends_with(".nii.gz") {
            Some(VolumeFormat::Nifti)
        } else if name.ends_with(".png") {
            Some(VolumeFormat::Png)
        } else if name.ends_with(".tif") || name.ends_with(".tiff") {
            Some(VolumeFormat::Tiff)
        } else {
            None
        }
    }

    /// Splits `dir/sub-01.nii.gz` into `("sub-01", ".nii.gz")`.
    pub fn split_name(path: &Path) -> Option<(String, String)> {
        VolumeFormat::from_path(path)?;
        let name = path.file_name()?.to_str()?;
        let lower = name.to_ascii_lowercase();
        let ext_len = if lower.ends_with(".nii.gz") {
            7
        } else {
            lower.len() - lower.rfind('.')?
        };
        let (stem, ext) = name.split_at(name.len() - ext_len);
        Some((stem.to_string(), ext.to_string()))
    }
}

/// 3-D scalar array, x fastest: `data[x + nx * (y + ny * z)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T> {
    pub dims: [usize; 3],
    pub data: Vec<T>,
    pub format: VolumeFormat,
}

impl<T: Scalar> Volume<T> {
    pub fn depth(&self) -> usize {
        self.dims[2]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Axial,
}

pub fn load_volume<T: Scalar>(path: &Path) -> Result<Volume<T>> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let format = VolumeFormat::from_path(path).ok_or_else(|| {
        Error::Format(format!("unsupported file type: {}", path.display()))
    })?;
    match format {
        VolumeFormat::Nifti => load_nifti(path),
        VolumeFormat::Png | VolumeFormat::Tiff => load_plane(path, format),
    }
}

fn load_nifti<T: Scalar>(path: &Path) -> Result<Volume<T>> {
    let bad = |e: nifti::NiftiError| Error::Format(format!("{}: {e}", path.display()));
    let obj = ReaderOptions::new().read_file(path).map_err(bad)?;
    let arr = obj.into_volume().into_ndarray::<f64>().map_err(bad)?;
    let shape = arr.shape().to_vec();
    let mut dims = [1usize; 3];
    match shape.len() {
        1..=3 => dims[..shape.len()].copy_from_slice(&shape),
        4 if shape[3] == 1 => dims.copy_from_slice(&shape[..3]),
        _ => {
            return Err(Error::Format(format!(
                "{}: expected a 2-D or 3-D volume, got dims {shape:?}",
                path.display()
            )))
        }
    }
    // logical [x, y, z] index order; reversing the axes makes x fastest
    let data = arr.t().iter().map(|&v| T::lit(v)).collect();
    Ok(Volume {
        dims,
        data,
        format: VolumeFormat::Nifti,
    })
}

fn load_plane<T: Scalar>(path: &Path, format: VolumeFormat) -> Result<Volume<T>> {
    let img = image::open(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<T> = match img {
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(|v| T::lit(v as f64)).collect(),
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(|v| T::lit(v as f64)).collect(),
        DynamicImage::ImageLumaA8(b) => b.pixels().map(|p| T::lit(p.0[0] as f64)).collect(),
        DynamicImage::ImageLumaA16(b) => b.pixels().map(|p| T::lit(p.0[0] as f64)).collect(),
        other => {
            return Err(Error::Format(format!(
                "{}: expected a grayscale image, got {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    Ok(Volume {
        dims: [w, h, 1],
        data,
        format,
    })
}

/// Slice index to use for a volume of the given depth: 120 when it exists,
/// otherwise the middle plane.
pub fn default_slice_index(depth: usize) -> usize {
    if DEFAULT_SLICE_INDEX < depth {
        DEFAULT_SLICE_INDEX
    } else {
        depth / 2
    }
}

pub fn extract_slice<T: Scalar>(
    volume: &Volume<T>,
    axis: Axis,
    index: usize,
    domain: Domain,
    subject_id: &str,
) -> Result<ImageSlice<T>> {
    let Axis::Axial = axis;
    let [nx, ny, nz] = volume.dims;
    if index >= nz {
        return Err(Error::Bounds { index, len: nz });
    }
    let plane = nx * ny;
    let px = volume.data[index * plane..(index + 1) * plane].to_vec();
    ImageSlice::new(Grid::new(nx, ny, px)?, domain, subject_id, index)
}

/// Loads `path` and extracts its axial slice. `index = None` picks
/// [`default_slice_index`].
pub fn load_slice<T: Scalar>(
    path: &Path,
    index: Option<usize>,
    domain: Domain,
    subject_id: &str,
) -> Result<ImageSlice<T>> {
    let vol = load_volume::<T>(path)?;
    let idx = index.unwrap_or_else(|| default_slice_index(vol.depth()));
    let idx = if vol.depth() == 1 { 0 } else { idx };
    extract_slice(&vol, Axis::Axial, idx, domain, subject_id)
}

/// Center crop and/or zero pad to `height×width`.
pub fn fit_to_shape<T: Scalar>(grid: &Grid<T>, height: usize, width: usize) -> Result<Grid<T>> {
    let (h, w) = grid.shape();
    let mut out = vec![T::zero(); height * width];
    let (oy, iy) = offsets(h, height);
    let (ox, ix) = offsets(w, width);
    for y in 0..h.min(height) {
        for x in 0..w.min(width) {
            out[(y + oy) * width + x + ox] = grid.get(x + ix, y + iy);
        }
    }
    Grid::new(width, height, out)
}

/// (destination offset, source offset) for centering `src` inside `dst`.
fn offsets(src: usize, dst: usize) -> (usize, usize) {
    if dst >= src {
        ((dst - src) / 2, 0)
    } else {
        (0, (src - dst) / 2)
    }
}

/// Writes a 2-D field. NIfTI output stores float32 values exactly; PNG
/// output is 16-bit with a fixed affine encoding sized for z-scored data.
pub fn write_slice<T: Scalar>(path: &Path, grid: &Grid<T>) -> Result<()> {
    match VolumeFormat::from_path(path) {
        Some(VolumeFormat::Nifti) => {
            let vals: Vec<f32> = grid.data().iter().map(|v| v.to_f64_lossy() as f32).collect();
            let arr = ndarray::Array2::from_shape_vec((grid.height(), grid.width()), vals)
                .map_err(|e| Error::Shape(e.to_string()))?
                .reversed_axes();
            WriterOptions::new(path)
                .write_nifti(&arr)
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
        }
        Some(VolumeFormat::Png) | Some(VolumeFormat::Tiff) => {
            let levels: Vec<u16> = grid
                .data()
                .iter()
                .map(|v| ((v.to_f64_lossy() + PNG_OFFSET) * PNG_SCALE).round().clamp(0.0, 65535.0) as u16)
                .collect();
            let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
                ImageBuffer::from_raw(grid.width() as u32, grid.height() as u32, levels)
                    .ok_or_else(|| Error::Shape("png buffer size".into()))?;
            buf.save(path)
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
        }
        None => Err(Error::Format(format!("unsupported output type: {}", path.display()))),
    }
}

/// Files in `dir` with a supported extension, keyed by subject id.
pub(crate) fn list_subject_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::NotFound(dir.to_path_buf()));
    }
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if let Some((stem, _)) = VolumeFormat::split_name(&path) {
            out.insert(stem, path);
        }
    }
    Ok(out)
}

/// Loads `<root>/{T1,T2}/<subject>.<ext>` pairs. With `subjects` given only
/// those are loaded (missing ones are an error); otherwise every subject
/// present in both domains is used, sorted by id.
pub fn discover_dataset<T: Scalar>(
    root: &Path,
    slice_index: Option<usize>,
    subjects: Option<&[String]>,
) -> Result<PairedDataset<T>> {
    let t1 = list_subject_files(&root.join("T1"))?;
    let t2 = list_subject_files(&root.join("T2"))?;
    let ids: Vec<String> = match subjects {
        Some(s) => s.to_vec(),
        None => {
            for id in t1.keys().filter(|k| !t2.contains_key(*k)) {
                log::warn!("subject {id} has no T2 image, skipped");
            }
            for id in t2.keys().filter(|k| !t1.contains_key(*k)) {
                log::warn!("subject {id} has no T1 image, skipped");
            }
            t1.keys().filter(|k| t2.contains_key(*k)).cloned().collect()
        }
    };
    let mut pairs = Vec::with_capacity(ids.len());
    for id in ids {
        let p1 = t1
            .get(&id)
            .ok_or_else(|| Error::NotFound(root.join("T1").join(&id)))?;
        let p2 = t2
            .get(&id)
            .ok_or_else(|| Error::NotFound(root.join("T2").join(&id)))?;
        pairs.push((
            load_slice(p1, slice_index, Domain::T1, &id)?,
            load_slice(p2, slice_index, Domain::T2, &id)?,
        ));
    }
    PairedDataset::new(pairs, Split::Train)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic_volume(dims: [usize; 3]) -> ndarray::Array3<f32> {
        ndarray::Array3::from_shape_fn((dims[0], dims[1], dims[2]), |(x, y, z)| {
            (x + 10 * y + 100 * z) as f32
        })
    }

    #[test]
    fn nifti_volume_dims_and_axial_slice() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vol.nii.gz");
        WriterOptions::new(&path)
            .write_nifti(&synthetic_volume([6, 5, 4]))
            .unwrap();
        let vol: Volume<f64> = load_volume(&path).unwrap();
        assert_eq!(vol.dims, [6, 5, 4]);
        let s = extract_slice(&vol, Axis::Axial, 2, Domain::T1, "s").unwrap();
        assert_eq!((s.width(), s.height()), (6, 5));
        assert_eq!(s.pixels().get(3, 4), (3 + 40 + 200) as f64);
        let err = extract_slice(&vol, Axis::Axial, 4, Domain::T1, "s").unwrap_err();
        assert!(matches!(err, Error::Bounds { index: 4, len: 4 }));
    }

    #[test]
    fn default_slice_is_120_when_deep_enough() {
        assert_eq!(default_slice_index(260), 120);
        assert_eq!(default_slice_index(10), 5);
        assert_eq!(default_slice_index(1), 0);
    }

    #[test]
    fn missing_file_is_not_found() {
        let err = load_volume::<f32>(Path::new("/nonexistent/x.nii")).unwrap_err();
        assert!(matches!(err, Error::NotFound(_)));
    }

    #[test]
    fn unknown_extension_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        fs::write(&p, "hello").unwrap();
        assert!(matches!(load_volume::<f32>(&p), Err(Error::Format(_))));
    }

    #[test]
    fn corrupt_header_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.nii");
        fs::write(&p, vec![7u8; 400]).unwrap();
        assert!(matches!(load_volume::<f32>(&p), Err(Error::Format(_))));
    }

    #[test]
    fn png_loads_as_depth_one() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(3, 2, vec![0, 1, 2, 300, 400, 65535]).unwrap();
        buf.save(&p).unwrap();
        let vol: Volume<f32> = load_volume(&p).unwrap();
        assert_eq!(vol.dims, [3, 2, 1]);
        assert_eq!(vol.data[5], 65535.0);
        let s = load_slice::<f32>(&p, Some(120), Domain::T2, "x").unwrap();
        assert_eq!(s.slice_index(), 0);
    }

    #[test]
    fn written_nifti_slice_reads_back_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s_syn.nii");
        let g = Grid::new(3, 2, vec![-1.5f32, 0.25, 3.0, 4.0, -0.125, 9.0]).unwrap();
        write_slice(&p, &g).unwrap();
        let back = load_slice::<f32>(&p, None, Domain::T1, "s").unwrap();
        assert_eq!(back.pixels(), &g);
    }

    #[test]
    fn fit_to_shape_crops_and_pads_centered() {
        let g = Grid::new(4, 4, (0..16).map(|v| v as f64).collect()).unwrap();
        let c = fit_to_shape(&g, 2, 2).unwrap();
        assert_eq!(c.data(), &[5.0, 6.0, 9.0, 10.0]);
        let p = fit_to_shape(&c, 4, 4).unwrap();
        assert_eq!(p.get(1, 1), 5.0);
        assert_eq!(p.get(0, 0), 0.0);
    }

    #[test]
    fn split_name_handles_double_extension() {
        let (s, e) = VolumeFormat::split_name(Path::new("/a/sub-1.nii.gz")).unwrap();
        assert_eq!((s.as_str(), e.as_str()), ("sub-1", ".nii.gz"));
        let (s, e) = VolumeFormat::split_name(Path::new("b.PNG")).unwrap();
        assert_eq!((s.as_str(), e.as_str()), ("b", ".PNG"));
    }
}
