use std::path::{Path, PathBuf};

use super::record::{DatasetManifest, ImageRef};
use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// A manifest together with its decoded pixels, aligned by record index.
#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub manifest: DatasetManifest,
    pub images: Vec<ImageTensor>,
}

impl LoadedDataset {
    /// Decodes every record. Relative paths resolve against `base_dir`
    /// (usually the directory holding the manifest file).
    pub fn from_manifest(manifest: DatasetManifest, base_dir: Option<&Path>) -> Result<Self> {
        let expected = manifest.image_shape();
        let images = manifest
            .records
            .iter()
            .map(|r| {
                let img = match &r.image {
                    ImageRef::Inline(img) => (**img).clone(),
                    ImageRef::Path(p) => ImageTensor::load_png(&resolve(base_dir, p))?,
                };
                if img.shape() != expected {
                    return Err(Error::shape(format!("{expected:?}"), format!("{:?}", img.shape())));
                }
                Ok(img)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { manifest, images })
    }

    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = super::load_manifest(manifest_path)?;
        Self::from_manifest(manifest, manifest_path.parent())
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Keeps the records at `indices`, in that order.
    pub fn select(&self, indices: &[usize], name: impl Into<String>) -> Result<Self> {
        let mut manifest = self.manifest.clone();
        manifest.records = indices.iter().map(|&i| self.manifest.records[i].clone()).collect();
        manifest.name = name.into();
        manifest.num_identities = manifest.count_train_identities();
        manifest.validate()?;
        Ok(Self {
            manifest,
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
        })
    }
}

fn resolve(base: Option<&Path>, p: &Path) -> PathBuf {
    match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p.to_path_buf(),
    }
}
