//! Candidate images for a study, with domain and provenance.

use std::fs;
use std::path::{Path, PathBuf};

use mrxlate_core::data::{Domain, VolumeFormat};
use mrxlate_core::models::ModelKind;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolImage {
    pub path: PathBuf,
    pub domain: Domain,
    /// `None` for real acquisitions.
    pub source_model: Option<ModelKind>,
}

#[derive(Clone, Debug, Default)]
pub struct ImagePool {
    images: Vec<PoolImage>,
}

impl ImagePool {
    pub fn new(mut images: Vec<PoolImage>) -> Self {
        images.sort_by(|a, b| a.path.cmp(&b.path));
        ImagePool { images }
    }

    /// Reads `<dir>/T1/*` and `<dir>/T2/*`. A missing domain directory
    /// contributes nothing; a missing `dir` is an error.
    pub fn scan(dir: &Path, source_model: Option<ModelKind>) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::Config(format!("pool directory {} does not exist", dir.display())));
        }
        let mut images = Vec::new();
        for domain in Domain::ALL {
            let sub = dir.join(domain.as_str());
            if !sub.is_dir() {
                continue;
            }
            for entry in fs::read_dir(&sub)? {
                let path = entry?.path();
                if VolumeFormat::from_path(&path).is_some() {
                    images.push(PoolImage {
                        path,
                        domain,
                        source_model,
                    });
                }
            }
        }
        Ok(ImagePool::new(images))
    }

    pub fn extend(&mut self, other: ImagePool) {
        self.images.extend(other.images);
        self.images.sort_by(|a, b| a.path.cmp(&b.path));
    }

    pub fn images(&self) -> &[PoolImage] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn of(&self, domain: Domain, model: Option<ModelKind>) -> Vec<&PoolImage> {
        self.images
            .iter()
            .filter(|im| im.domain == domain && im.source_model == model)
            .collect()
    }
}
