use candle_core::{DType, Tensor};
use rand::Rng;
use serde_json::json;

use super::{dataset_tensor, epoch_batches, lr_at_epoch, select_rows, TrainConfig};
use crate::datasets::LoadedDataset;
use crate::error::{Error, Result};
use crate::losses::{cross_entropy_per_sample, scalar};
use crate::nn::{Adam, Architecture, Mode, ModelParams};
use crate::reid::{reid_forward, ReIdConfig};
use crate::rng::{mix_seed, rng_for};

const BATCH_STREAM: u64 = 0xC1A5;
const FLIP_STREAM: u64 = 0xF11B;
const EVAL_CHUNK: usize = 128;

fn flip_some(x: &Tensor, rng: &mut impl Rng) -> Result<Tensor> {
    let (b, _, _, w) = x.dims4()?;
    let rev: Vec<u32> = (0..w as u32).rev().collect();
    let flipped = x.index_select(&Tensor::from_vec(rev, w, x.device())?, 3)?;
    let mask: Vec<f64> = (0..b).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
    let m = Tensor::from_vec(mask, (b, 1, 1, 1), x.device())?.to_dtype(x.dtype())?;
    let keep = (m.ones_like()? - &m)?;
    Ok((x.broadcast_mul(&keep)? + flipped.broadcast_mul(&m)?)?)
}

/// Supervised cross-entropy training of a classifier over `labels`
/// (indices into `vocabulary`). The returned parameters carry the
/// vocabulary and, in their metadata, the per-epoch mean loss plus the
/// final eval-mode accuracy and cross-entropy on the training data.
pub fn train_classifier(
    images: &Tensor,
    labels: &[usize],
    vocabulary: Vec<i64>,
    mut arch: ReIdConfig,
    config: &TrainConfig,
) -> Result<ModelParams> {
    config.validate()?;
    let n = images.dims()[0];
    if n != labels.len() {
        return Err(Error::shape(format!("{n} labels"), labels.len()));
    }
    if n < 2 {
        return Err(Error::Precondition("need at least two training images".into()));
    }
    arch.num_classes = vocabulary.len();
    let params = ModelParams::initialize(Architecture::ReId(arch), config.seed, images.dtype())?;
    let mut adam = Adam::new(config.adam);
    let mut flip_rng = rng_for(mix_seed(config.seed, FLIP_STREAM), 0);
    let mut epoch_losses = Vec::with_capacity(config.total_epochs);
    for epoch in 0..config.total_epochs {
        let lr = lr_at_epoch(config, epoch)?;
        let mut total = 0.0;
        let mut count = 0;
        for batch in epoch_batches(n, config.batch_size, config.seed, BATCH_STREAM, epoch) {
            let mut x = select_rows(images, &batch)?;
            if config.horizontal_flip {
                x = flip_some(&x, &mut flip_rng)?;
            }
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let out = reid_forward(&params, &x, Mode::Train)?;
            let loss = cross_entropy_per_sample(&out.logits, &y)?.mean_all()?;
            let grads = loss.backward()?;
            adam.step(&params, &grads, lr)?;
            total += scalar(&loss)? * batch.len() as f64;
            count += batch.len();
        }
        let mean = total / count.max(1) as f64;
        log::debug!("classifier epoch {epoch}: loss {mean:.4}");
        epoch_losses.push(mean);
    }
    let mut params = params;
    let (accuracy, cross_entropy) = classification_accuracy_on(&params, images, labels)?;
    params.vocabulary = Some(vocabulary);
    params.metadata.insert("epoch_losses".into(), json!(epoch_losses));
    params.metadata.insert("train_accuracy".into(), json!(accuracy));
    params.metadata.insert("train_cross_entropy".into(), json!(cross_entropy));
    Ok(params)
}

/// Eval-mode accuracy and mean cross-entropy of `params` on labeled images.
pub fn classification_accuracy_on(params: &ModelParams, images: &Tensor, labels: &[usize]) -> Result<(f64, f64)> {
    let n = images.dims()[0];
    if n != labels.len() {
        return Err(Error::shape(format!("{n} labels"), labels.len()));
    }
    let frozen = params.frozen();
    let mut correct = 0usize;
    let mut ce = 0.0;
    for start in (0..n).step_by(EVAL_CHUNK) {
        let len = EVAL_CHUNK.min(n - start);
        let x = images.narrow(0, start, len)?;
        let y = &labels[start..start + len];
        let logits = reid_forward(&frozen, &x, Mode::Eval)?.logits;
        let pred = logits.argmax(1)?.to_dtype(DType::U32)?.to_vec1::<u32>()?;
        correct += pred.iter().zip(y).filter(|(p, t)| **p as usize == **t).count();
        ce += scalar(&cross_entropy_per_sample(&logits, y)?.sum_all()?)?;
    }
    Ok((correct as f64 / n.max(1) as f64, ce / n.max(1) as f64))
}

fn class_indices(identities: &[i64], vocabulary: &[i64]) -> Result<Vec<usize>> {
    identities
        .iter()
        .map(|id| {
            vocabulary
                .binary_search(id)
                .map_err(|_| Error::Vocabulary(format!("identity {id} not in the classifier vocabulary")))
        })
        .collect()
}

/// Identity classifier over the source training set, used frozen during GAN
/// training.
pub fn pretrain_semantic_discriminator(
    source_train: &LoadedDataset,
    arch: &ReIdConfig,
    config: &TrainConfig,
) -> Result<ModelParams> {
    if source_train.is_empty() {
        return Err(Error::Precondition("source training set is empty".into()));
    }
    let vocabulary = source_train.manifest.identities();
    if vocabulary.len() < 2 {
        return Err(Error::Precondition(format!(
            "degenerate classification: {} identity in the source training set",
            vocabulary.len()
        )));
    }
    let ids: Vec<i64> = source_train.manifest.records.iter().map(|r| r.identity).collect();
    let labels = class_indices(&ids, &vocabulary)?;
    let images = dataset_tensor(source_train, DType::F32)?;
    let mut arch = arch.clone();
    arch.use_ibn = false;
    train_classifier(&images, &labels, vocabulary, arch, config)
}

/// Re-ID classifier over a labeled training set whose identities are
/// exactly `0..N`.
pub fn train_reid(train_set: &LoadedDataset, arch: &ReIdConfig, config: &TrainConfig, use_ibn: bool) -> Result<ModelParams> {
    if train_set.is_empty() {
        return Err(Error::Precondition("re-ID training set is empty".into()));
    }
    let vocabulary = train_set.manifest.identities();
    if let Some((i, id)) = vocabulary.iter().enumerate().find(|(i, id)| **id != *i as i64) {
        return Err(Error::Vocabulary(format!(
            "labels must be contiguous from 0 (found {id} at position {i}); remap identities first"
        )));
    }
    let labels: Vec<usize> = train_set.manifest.records.iter().map(|r| r.identity as usize).collect();
    let images = dataset_tensor(train_set, DType::F32)?;
    let mut arch = arch.clone();
    arch.use_ibn = use_ibn;
    train_classifier(&images, &labels, vocabulary, arch, config)
}

/// Camera classifier over real target images; class `k` is camera `k + 1`.
pub fn train_camera_classifier(target_train: &LoadedDataset, arch: &ReIdConfig, config: &TrainConfig) -> Result<ModelParams> {
    if target_train.is_empty() {
        return Err(Error::Precondition("target training set is empty".into()));
    }
    let cams = target_train.manifest.num_cameras;
    let labels: Vec<usize> = target_train.manifest.records.iter().map(|r| r.camera as usize - 1).collect();
    let images = dataset_tensor(target_train, DType::F32)?;
    let vocabulary = (1..=cams as i64).collect();
    let mut arch = arch.clone();
    arch.use_ibn = false;
    train_classifier(&images, &labels, vocabulary, arch, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate_synthetic_dataset, SyntheticSpec};

    fn tiny_arch() -> ReIdConfig {
        ReIdConfig {
            stem_channels: 4,
            stage_channels: vec![4, 8],
            blocks_per_stage: vec![1, 1],
            embedding_dim: 16,
            ..ReIdConfig::desk(32, 16, 3, 2)
        }
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            total_epochs: 2,
            batch_size: 16,
            ..TrainConfig::classifier_default()
        }
    }

    #[test]
    fn single_identity_is_degenerate() {
        let spec = SyntheticSpec::new(2, 2, 1, 32, 16).unwrap();
        let corpus = generate_synthetic_dataset(&spec, 1).unwrap();
        let data = LoadedDataset::from_manifest(corpus.source_train, None).unwrap();
        let keep: Vec<usize> = (0..data.len()).filter(|&i| data.manifest.records[i].identity == 0).collect();
        let one = data.select(&keep, "one").unwrap();
        let err = pretrain_semantic_discriminator(&one, &tiny_arch(), &quick()).unwrap_err();
        assert!(err.to_string().contains("degenerate classification"));
    }

    #[test]
    fn training_is_deterministic() {
        let spec = SyntheticSpec::new(3, 2, 2, 32, 16).unwrap();
        let corpus = generate_synthetic_dataset(&spec, 4).unwrap();
        let data = LoadedDataset::from_manifest(corpus.source_train, None).unwrap();
        let a = train_reid(&data, &tiny_arch(), &quick(), false).unwrap();
        let b = train_reid(&data, &tiny_arch(), &quick(), false).unwrap();
        assert!(a.same_values(&b).unwrap());
        assert_eq!(a.vocabulary, Some(vec![0, 1, 2]));
    }

    #[test]
    fn non_contiguous_labels_rejected() {
        let spec = SyntheticSpec::new(3, 2, 1, 32, 16).unwrap();
        let corpus = generate_synthetic_dataset(&spec, 4).unwrap();
        let data = LoadedDataset::from_manifest(corpus.target_train, None).unwrap();
        assert!(matches!(train_reid(&data, &tiny_arch(), &quick(), false), Err(Error::Vocabulary(_))));
    }
}
