//! Image slices, normalization, dataset splits and batching.

mod batch;
mod io;
mod manifest;
mod normalize;
mod split;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub(crate) use batch::batch_indices;
pub use batch::{make_batches, Batch, BatchMode};
pub use io::{
    discover_dataset, extract_slice, fit_to_shape, load_slice, load_volume, write_slice, Axis,
    Volume, VolumeFormat, DEFAULT_SLICE_INDEX,
};
pub use manifest::SplitManifest;
pub use normalize::{zscore_grid, zscore_normalize};
pub use split::split_dataset;

/// Row-major 2-D field, `data[y * width + x]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Scalar> Grid<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(format!("empty grid {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{width}x{height} grid needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Grid { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// `(height, width)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn min_max(&self) -> (T, T) {
        self.data.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::from_vec([1, 1, self.height, self.width], self.data.clone())
            .expect("grid dims match")
    }

    /// Accepts single-sample, single-channel tensors.
    pub fn from_tensor(t: &Tensor<T>) -> Result<Self> {
        let [n, c, h, w] = t.shape();
        if n != 1 || c != 1 {
            return Err(Error::Shape(format!("expected [1,1,h,w], got {:?}", t.shape())));
        }
        Grid::new(w, h, t.data().to_vec())
    }

    pub(crate) fn check_same_shape(&self, other: &Grid<T>) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

/// MR contrast. A = T1, B = T2 throughout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Domain {
    T1,
    T2,
}

impl Domain {
    pub const ALL: [Domain; 2] = [Domain::T1, Domain::T2];

    pub fn other(self) -> Domain {
        match self {
            Domain::T1 => Domain::T2,
            Domain::T2 => Domain::T1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::T1 => "T1",
            Domain::T2 => "T2",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "T1" | "A" => Ok(Domain::T1),
            "T2" | "B" => Ok(Domain::T2),
            _ => Err(Error::Config(format!("unknown domain {s:?} (expected T1 or T2)"))),
        }
    }
}

/// Translation direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    T1ToT2,
    T2ToT1,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::T1ToT2, Direction::T2ToT1];

    pub fn source(self) -> Domain {
        match self {
            Direction::T1ToT2 => Domain::T1,
            Direction::T2ToT1 => Domain::T2,
        }
    }

    pub fn target(self) -> Domain {
        self.source().other()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::T1ToT2 => "t1_to_t2",
            Direction::T2ToT1 => "t2_to_t1",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "t1_to_t2" | "a2b" | "ab" => Ok(Direction::T1ToT2),
            "t2_to_t1" | "b2a" | "ba" => Ok(Direction::T2ToT1),
            _ => Err(Error::Config(format!(
                "unknown direction {s:?} (expected t1_to_t2 or t2_to_t1)"
            ))),
        }
    }
}

/// One 2-D slice in scanner intensity units.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSlice<T> {
    pixels: Grid<T>,
    domain: Domain,
    subject_id: String,
    slice_index: usize,
}

impl<T: Scalar> ImageSlice<T> {
    pub fn new(
        pixels: Grid<T>,
        domain: Domain,
        subject_id: impl Into<String>,
        slice_index: usize,
    ) -> Result<Self> {
        if let Some(i) = pixels.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!("non-finite pixel at offset {i}")));
        }
        Ok(ImageSlice {
            pixels,
            domain,
            subject_id: subject_id.into(),
            slice_index,
        })
    }

    pub fn pixels(&self) -> &Grid<T> {
        &self.pixels
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn slice_index(&self) -> usize {
        self.slice_index
    }

    pub fn width(&self) -> usize {
        self.pixels.width()
    }

    pub fn height(&self) -> usize {
        self.pixels.height()
    }
}

/// Z-scored slice with the statistics needed to undo the normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedImage<T> {
    pub pixels: Grid<T>,
    pub source_mean: T,
    pub source_std: T,
}

impl<T: Scalar> NormalizedImage<T> {
    /// Wraps values that already live in normalized space (model outputs).
    pub fn from_grid(pixels: Grid<T>) -> Self {
        NormalizedImage {
            pixels,
            source_mean: T::zero(),
            source_std: T::one(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.pixels.shape()
    }

    pub fn denormalize(&self) -> Grid<T> {
        let (m, s) = (self.source_mean, self.source_std);
        self.pixels.map(|v| v * s + m)
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        self.pixels.to_tensor()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Subject-aligned (T1, T2) slice pairs.
#[derive(Clone, Debug)]
pub struct PairedDataset<T> {
    pairs: Vec<(ImageSlice<T>, ImageSlice<T>)>,
    split: Split,
}

impl<T: Scalar> PairedDataset<T> {
    pub fn new(pairs: Vec<(ImageSlice<T>, ImageSlice<T>)>, split: Split) -> Result<Self> {
        for (t1, t2) in &pairs {
            if t1.domain() != Domain::T1 || t2.domain() != Domain::T2 {
                return Err(Error::Config(format!(
                    "pair for {} must be (T1, T2), got ({}, {})",
                    t1.subject_id(),
                    t1.domain(),
                    t2.domain()
                )));
            }
            if t1.subject_id() != t2.subject_id() || t1.slice_index() != t2.slice_index() {
                return Err(Error::Config(format!(
                    "misaligned pair: {}#{} vs {}#{}",
                    t1.subject_id(),
                    t1.slice_index(),
                    t2.subject_id(),
                    t2.slice_index()
                )));
            }
        }
        Ok(PairedDataset { pairs, split })
    }

    pub fn pairs(&self) -> &[(ImageSlice<T>, ImageSlice<T>)] {
        &self.pairs
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn subjects(&self) -> Vec<String> {
        self.pairs.iter().map(|(a, _)| a.subject_id().to_string()).collect()
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    /// Common `(height, width)` of every slice, if uniform.
    pub fn image_shape(&self) -> Result<(usize, usize)> {
        let mut shapes = self
            .pairs
            .iter()
            .flat_map(|(a, b)| [a.pixels().shape(), b.pixels().shape()]);
        let first = shapes
            .next()
            .ok_or_else(|| Error::Config("empty dataset".into()))?;
        if shapes.any(|s| s != first) {
            return Err(Error::Shape("dataset slices differ in shape".into()));
        }
        Ok(first)
    }
}
