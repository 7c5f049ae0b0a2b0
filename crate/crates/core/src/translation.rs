//! Applies a trained generator to a labeled source set, producing one
//! restyled copy of every image per requested target camera.

use std::fs;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};

use crate::datasets::{save_manifest, DatasetManifest, ImageRecord, ImageRef, LoadedDataset, Split};
use crate::datasets::manifest::reid_file_stem;
use crate::error::{Error, Result};
use crate::gan::{generator_config, generator_forward, DomainLabel};
use crate::image::{batch_to_tensor, tensor_to_batch};
use crate::nn::ModelParams;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const IMAGE_DIR: &str = "images";
const BATCH: usize = 32;

/// Anything that maps a batch of images into requested domains.
pub trait Translator {
    /// `L + 1`.
    fn num_domains(&self) -> usize;
    fn translate(&self, x: &Tensor, labels: &[DomainLabel]) -> Result<Tensor>;
}

impl Translator for ModelParams {
    fn num_domains(&self) -> usize {
        generator_config(self).map(|c| c.num_domains).unwrap_or(0)
    }

    fn translate(&self, x: &Tensor, labels: &[DomainLabel]) -> Result<Tensor> {
        generator_forward(&self.frozen(), x, labels)
    }
}

/// Returns its input unchanged; a stand-in generator for plumbing checks.
#[derive(Clone, Copy, Debug)]
pub struct IdentityTranslator {
    pub num_domains: usize,
}

impl Translator for IdentityTranslator {
    fn num_domains(&self) -> usize {
        self.num_domains
    }

    fn translate(&self, x: &Tensor, _labels: &[DomainLabel]) -> Result<Tensor> {
        Ok(x.clone())
    }
}

#[derive(Clone, Debug)]
pub struct TranslationJob {
    /// Target cameras (1-based); empty means every camera the generator knows.
    pub target_cameras: Vec<u32>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub name: String,
}

impl TranslationJob {
    pub fn new(output_dir: impl Into<PathBuf>) -> Self {
        Self {
            target_cameras: Vec::new(),
            output_dir: output_dir.into(),
            seed: 0,
            name: "translated".into(),
        }
    }
}

/// Writes `|source| x |cameras|` PNGs under `output_dir/images` plus
/// `output_dir/manifest.txt`. Each output keeps its source identity; its
/// camera is the styling target. The returned manifest's paths point into
/// `output_dir`.
pub fn translate_dataset<T: Translator + ?Sized>(
    translator: &T,
    source: &LoadedDataset,
    job: &TranslationJob,
) -> Result<DatasetManifest> {
    let num_domains = translator.num_domains();
    if num_domains < 2 {
        return Err(Error::Precondition("translator has no target domains".into()));
    }
    let cams = num_domains - 1;
    let targets: Vec<u32> = if job.target_cameras.is_empty() {
        (1..=cams as u32).collect()
    } else {
        job.target_cameras.clone()
    };
    for &c in &targets {
        if c == 0 || c as usize > cams {
            return Err(Error::CameraOutOfRange { camera: c as i64, num_cameras: cams });
        }
    }
    let image_dir = job.output_dir.join(IMAGE_DIR);
    fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;

    let src = &source.manifest;
    let mut relative = Vec::with_capacity(source.len() * targets.len());
    for start in (0..source.len()).step_by(BATCH) {
        let end = (start + BATCH).min(source.len());
        let refs: Vec<_> = source.images[start..end].iter().collect();
        let x = batch_to_tensor(&refs, DType::F32, &Device::Cpu)?;
        for &cam in &targets {
            let labels = vec![DomainLabel::camera(cam, num_domains)?; end - start];
            let out = tensor_to_batch(&translator.translate(&x, &labels)?)?;
            for (k, img) in out.iter().enumerate() {
                let index = start + k;
                let rec = &src.records[index];
                let rel = Path::new(IMAGE_DIR).join(format!("{}.png", reid_file_stem(rec.identity, cam, index)));
                img.save_png(&job.output_dir.join(&rel))?;
                relative.push((index, cam, rel));
            }
        }
    }
    // source-major, camera-minor order regardless of batching
    relative.sort_by_key(|(i, c, _)| (*i, *c));
    let records: Vec<ImageRecord> = relative
        .into_iter()
        .map(|(index, cam, rel)| {
            let rec = &src.records[index];
            let origin = match &rec.image {
                ImageRef::Path(p) => p.display().to_string(),
                ImageRef::Inline(_) => format!("{}#{index}", src.name),
            };
            ImageRecord {
                image: ImageRef::Path(rel),
                identity: rec.identity,
                camera: cam,
                split: Split::Train,
                is_synthetic: true,
                provenance: Some(format!("translated-from:{origin}")),
            }
        })
        .collect();
    let manifest = DatasetManifest::new(job.name.clone(), records, cams, src.image_shape(), Some(job.seed))?;
    save_manifest(&manifest, &job.output_dir.join(MANIFEST_FILE))?;
    let mut resolved = manifest;
    for r in &mut resolved.records {
        if let ImageRef::Path(p) = &r.image {
            r.image = ImageRef::Path(job.output_dir.join(p));
        }
    }
    Ok(resolved)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate_synthetic_dataset, SyntheticSpec};

    #[test]
    fn unknown_camera_rejected() {
        let spec = SyntheticSpec::new(2, 2, 1, 32, 16).unwrap();
        let corpus = generate_synthetic_dataset(&spec, 0).unwrap();
        let data = LoadedDataset::from_manifest(corpus.source_train, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let job = TranslationJob { target_cameras: vec![3], ..TranslationJob::new(dir.path()) };
        let err = translate_dataset(&IdentityTranslator { num_domains: 3 }, &data, &job).unwrap_err();
        assert!(matches!(err, Error::CameraOutOfRange { camera: 3, .. }));
    }
}
