//! The whole desk pipeline for one seed, in process: corpus, semantic
//! discriminator, GAN with and without the identity term, translation,
//! audits, re-ID training and retrieval scoring.

use std::path::Path;
use std::time::Instant;

use candle_core::{DType, Device};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::datasets::{generate_synthetic_dataset, LoadedDataset, SyntheticCorpus};
use crate::error::{Error, Result};
use crate::evaluation::{camera_assignment_accuracy, compute_cmc_map, extract_features, identity_preservation_accuracy, EvalResult};
use crate::gan::{translate_image, DomainLabel};
use crate::image::batch_to_tensor;
use crate::nn::ModelParams;
use crate::reid::semantic_discriminator_forward;
use crate::training::{pretrain_semantic_discriminator, train_camera_classifier, train_ipgan, train_reid, Checkpoint, GanRunOptions};
use crate::translation::{translate_dataset, TranslationJob};

/// Retrieval numbers for one trained re-ID model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalScore {
    pub rank1: f64,
    pub rank5: f64,
    #[serde(rename = "mAP")]
    pub map: f64,
    pub train_cross_entropy: f64,
}

impl RetrievalScore {
    fn new(r: &EvalResult, model: &ModelParams) -> Self {
        Self {
            rank1: r.rank1(),
            rank5: r.cmc.get(4).copied().unwrap_or(1.0),
            map: r.map,
            train_cross_entropy: model.metadata["train_cross_entropy"].as_f64().unwrap_or(f64::NAN),
        }
    }
}

/// Everything measured in one seed's run. Timings are kept apart so the
/// metrics can be compared for bit-identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub num_source_identities: usize,
    pub semantic_train_accuracy: f64,
    /// Semantic discriminator applied to the untranslated source set.
    pub semantic_source_accuracy: f64,
    pub semantic_unchanged: bool,
    pub semantic_probe_logits_before: Vec<f64>,
    pub semantic_probe_logits_after: Vec<f64>,
    pub ipgan_rec_first: f64,
    pub ipgan_rec_last: f64,
    pub stargan_rec_first: f64,
    pub stargan_rec_last: f64,
    pub ipgan_domains_differ: bool,
    pub ipgan_translated_count: usize,
    pub identity_accuracy_ipgan: f64,
    pub identity_accuracy_stargan: f64,
    pub camera_classifier_train_accuracy: f64,
    pub camera_accuracy_ipgan: f64,
    pub camera_accuracy_stargan: f64,
    pub reid_ipgan: RetrievalScore,
    pub reid_direct: RetrievalScore,
    pub reid_direct_ibn: RetrievalScore,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct StageTimes {
    pub semantic: f64,
    pub gan_ipgan: f64,
    pub gan_stargan: f64,
    pub translation: f64,
    pub camera_classifier: f64,
    /// Re-ID training on the translated set.
    pub reid_translated: f64,
    /// Both direct-transfer re-ID trainings.
    pub reid_direct: f64,
    pub evaluation: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub metrics: SeedMetrics,
    pub seconds: StageTimes,
}

fn loaded(corpus: &SyntheticCorpus) -> Result<[LoadedDataset; 4]> {
    Ok([
        LoadedDataset::from_manifest(corpus.source_train.clone(), None)?,
        LoadedDataset::from_manifest(corpus.target_train.clone(), None)?,
        LoadedDataset::from_manifest(corpus.query.clone(), None)?,
        LoadedDataset::from_manifest(corpus.gallery.clone(), None)?,
    ])
}

fn probe_logits(semantic: &ModelParams, source: &LoadedDataset) -> Result<Vec<f64>> {
    let x = batch_to_tensor(&[&source.images[0]], DType::F32, &Device::Cpu)?;
    let logits = semantic_discriminator_forward(semantic, &x)?;
    Ok(logits.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?)
}

fn rec_window(c: &Checkpoint) -> (f64, f64) {
    (
        c.mean_metric("g_rec", 0.0, 0.1).unwrap_or(f64::NAN),
        c.mean_metric("g_rec", 0.9, 1.0).unwrap_or(f64::NAN),
    )
}

fn timed<T>(slot: &mut f64, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t = Instant::now();
    let out = f();
    *slot += t.elapsed().as_secs_f64();
    out
}

/// Runs the pipeline with `config.seed` replaced by `seed`. Translated
/// images are written below `work_dir`.
pub fn run_seed(config: &RunConfig, seed: u64, work_dir: &Path) -> Result<SeedOutcome> {
    let mut cfg = config.clone();
    cfg.seed = seed;
    cfg.validate()?;
    let mut t = StageTimes::default();
    let corpus = generate_synthetic_dataset(&cfg.synthetic_spec()?, seed)?;
    let [source, target, query, gallery] = loaded(&corpus)?;
    let channels = source.manifest.image_channels;
    let arch = cfg.reid_arch(channels);

    let semantic = timed(&mut t.semantic, || pretrain_semantic_discriminator(&source, &arch, &cfg.dsem_train()))?;
    let semantic_bytes = semantic.to_bytes()?;
    let probe_before = probe_logits(&semantic, &source)?;

    let setup = cfg.gan_setup(target.manifest.num_cameras, channels);
    let ipgan = timed(&mut t.gan_ipgan, || train_ipgan(&source, &target, &semantic, &setup, GanRunOptions::default()))?;
    let mut ablation = setup.clone();
    ablation.train.with_semantic = false;
    let stargan = timed(&mut t.gan_stargan, || train_ipgan(&source, &target, &semantic, &ablation, GanRunOptions::default()))?;
    let semantic_unchanged = semantic.to_bytes()? == semantic_bytes;
    let probe_after = probe_logits(&semantic, &source)?;

    let num_domains = setup.generator.num_domains;
    let a = translate_image(&ipgan.generator, &source.images[0], DomainLabel::new(1, num_domains)?)?;
    let b = translate_image(&ipgan.generator, &source.images[0], DomainLabel::new(2.min(num_domains - 1), num_domains)?)?;
    let domains_differ = a.max_abs_diff(&b) > 0.0;

    let translate = |g: &ModelParams, name: &str| -> Result<LoadedDataset> {
        let job = TranslationJob {
            target_cameras: cfg.translation.target_cameras.clone(),
            output_dir: work_dir.join(name),
            seed,
            name: format!("translated-{name}"),
        };
        LoadedDataset::from_manifest(translate_dataset(g, &source, &job)?, None)
    };
    let (ipgan_set, stargan_set) = timed(&mut t.translation, || {
        Ok((translate(&ipgan.generator, "ipgan")?, translate(&stargan.generator, "stargan")?))
    })?;

    let camera = timed(&mut t.camera_classifier, || train_camera_classifier(&target, &arch, &cfg.camera_train_config()))?;

    let reid_cfg = cfg.reid_train_config();
    let reid_ipgan = timed(&mut t.reid_translated, || train_reid(&ipgan_set, &arch, &reid_cfg, false))?;
    let (reid_direct, reid_direct_ibn) = timed(&mut t.reid_direct, || {
        Ok((train_reid(&source, &arch, &reid_cfg, false)?, train_reid(&source, &arch, &reid_cfg, true)?))
    })?;

    let score = |m: &ModelParams| -> Result<RetrievalScore> {
        let q = extract_features(m, &query)?;
        let g = extract_features(m, &gallery)?;
        Ok(RetrievalScore::new(&compute_cmc_map(&q, &g, cfg.protocol.cmc_depth)?, m))
    };
    let metrics = timed(&mut t.evaluation, || {
        let (ipgan_rec_first, ipgan_rec_last) = rec_window(&ipgan);
        let (stargan_rec_first, stargan_rec_last) = rec_window(&stargan);
        Ok(SeedMetrics {
            seed,
            num_source_identities: source.manifest.num_identities,
            semantic_train_accuracy: semantic.metadata["train_accuracy"].as_f64().unwrap_or(f64::NAN),
            semantic_source_accuracy: identity_preservation_accuracy(&semantic, &source)?,
            semantic_unchanged,
            semantic_probe_logits_before: probe_before,
            semantic_probe_logits_after: probe_after,
            ipgan_rec_first,
            ipgan_rec_last,
            stargan_rec_first,
            stargan_rec_last,
            ipgan_domains_differ: domains_differ,
            ipgan_translated_count: ipgan_set.len(),
            identity_accuracy_ipgan: identity_preservation_accuracy(&semantic, &ipgan_set)?,
            identity_accuracy_stargan: identity_preservation_accuracy(&semantic, &stargan_set)?,
            camera_classifier_train_accuracy: camera.metadata["train_accuracy"].as_f64().unwrap_or(f64::NAN),
            camera_accuracy_ipgan: camera_assignment_accuracy(&camera, &ipgan_set)?,
            camera_accuracy_stargan: camera_assignment_accuracy(&camera, &stargan_set)?,
            reid_ipgan: score(&reid_ipgan)?,
            reid_direct: score(&reid_direct)?,
            reid_direct_ibn: score(&reid_direct_ibn)?,
        })
    })?;
    if !metrics.semantic_unchanged {
        return Err(Error::Precondition("semantic discriminator was modified".into()));
    }
    Ok(SeedOutcome { metrics, seconds: t })
}
