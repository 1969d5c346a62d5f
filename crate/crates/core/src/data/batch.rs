use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::PairedDataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    /// `(t1[i], t2[i])` come from the same subject.
    Paired,
    /// T1 and T2 streams are shuffled independently.
    Unpaired,
}

impl fmt::Display for BatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BatchMode::Paired => "paired",
            BatchMode::Unpaired => "unpaired",
        })
    }
}

impl FromStr for BatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paired" => Ok(BatchMode::Paired),
            "unpaired" => Ok(BatchMode::Unpaired),
            _ => Err(Error::Config(format!("unknown mode {s:?} (paired|unpaired)"))),
        }
    }
}

/// Indices into `PairedDataset::pairs()`: `t1` selects T1 slices, `t2`
/// selects T2 slices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub t1: Vec<usize>,
    pub t2: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.t1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t1.is_empty()
    }
}

/// One epoch of batches. The trailing batch keeps the remainder.
pub fn make_batches<T: Scalar>(
    dataset: &PairedDataset<T>,
    batch_size: usize,
    mode: BatchMode,
    seed: u64,
) -> Result<Vec<Batch>> {
    batch_indices(dataset.len(), batch_size, mode, seed)
}

/// [`make_batches`] for a dataset of `n` pairs.
pub(crate) fn batch_indices(n: usize, batch_size: usize, mode: BatchMode, seed: u64) -> Result<Vec<Batch>> {
    if batch_size < 1 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t1: Vec<usize> = (0..n).collect();
    t1.shuffle(&mut rng);
    let t2 = match mode {
        BatchMode::Paired => t1.clone(),
        BatchMode::Unpaired => {
            // separate stream so the T2 order does not depend on the T1 draw
            let mut rng2 = ChaCha8Rng::seed_from_u64(seed);
            rng2.set_stream(1);
            let mut t2: Vec<usize> = (0..n).collect();
            t2.shuffle(&mut rng2);
            t2
        }
    };
    Ok(t1
        .chunks(batch_size)
        .zip(t2.chunks(batch_size))
        .map(|(a, b)| Batch {
            t1: a.to_vec(),
            t2: b.to_vec(),
        })
        .collect())
}
