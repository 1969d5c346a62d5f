use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::PairedDataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// JSON record of a train/test split. `root` and `slice_index` let later
/// commands reload the same slices without repeating the flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub train_subjects: Vec<String>,
    pub test_subjects: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice_index: Option<usize>,
}

impl SplitManifest {
    pub fn from_split<T: Scalar>(
        seed: u64,
        train: &PairedDataset<T>,
        test: &PairedDataset<T>,
    ) -> Self {
        SplitManifest {
            seed,
            train_subjects: train.subjects(),
            test_subjects: test.subjects(),
            root: None,
            slice_index: None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::NotFound(path.to_path_buf()));
        }
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}
