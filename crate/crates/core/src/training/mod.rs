//! The three training procedures: semantic discriminator pretraining, GAN
//! training with the frozen discriminator, and re-ID classifier training.

mod classifier;
mod gan;

pub use classifier::{
    classification_accuracy_on, pretrain_semantic_discriminator, train_camera_classifier, train_classifier, train_reid,
};
pub use gan::{train_ipgan, Checkpoint, GanSetup, GanRunOptions};

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datasets::LoadedDataset;
use crate::error::{Error, Result};
use crate::image::batch_to_tensor;
use crate::losses::{AdversarialForm, LossWeights};
use crate::nn::AdamConfig;
use crate::rng::{mix_seed, rng_for};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub total_epochs: usize,
    pub base_lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default = "one")]
    pub d_steps_per_g_step: usize,
    #[serde(default = "yes")]
    pub with_semantic: bool,
    pub adam: AdamConfig,
    /// Epochs between checkpoints; 0 writes only the final one.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub adversarial_form: AdversarialForm,
    /// Random horizontal flips of classifier training batches.
    #[serde(default)]
    pub horizontal_flip: bool,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

impl TrainConfig {
    /// GAN defaults: 200 epochs, 1e-4 halving into a linear decay.
    pub fn gan_default() -> Self {
        Self {
            total_epochs: 200,
            base_lr: 1e-4,
            batch_size: 16,
            seed: 0,
            weights: LossWeights::default(),
            d_steps_per_g_step: 1,
            with_semantic: true,
            adam: AdamConfig::GAN,
            checkpoint_every: 0,
            adversarial_form: AdversarialForm::Saturating,
            horizontal_flip: false,
        }
    }

    pub fn classifier_default() -> Self {
        Self {
            total_epochs: 30,
            base_lr: 1e-3,
            batch_size: 32,
            adam: AdamConfig::CLASSIFIER,
            ..Self::gan_default()
        }
    }

    /// The effective semantic switch: a zero weight disables the term too.
    pub fn semantic_active(&self) -> bool {
        self.with_semantic && self.weights.lambda_sem > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| Err(Error::Config { key: key.into(), message: message.into() });
        if self.total_epochs == 0 || self.total_epochs % 2 != 0 {
            return bad("total_epochs", "must be a positive even number");
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr", "must be positive");
        }
        if self.batch_size < 2 {
            return bad("batch_size", "must be at least 2");
        }
        if self.d_steps_per_g_step == 0 {
            return bad("d_steps_per_g_step", "must be at least 1");
        }
        let a = self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.eps <= 0.0 {
            return bad("adam", "betas must lie in [0, 1) and eps must be positive");
        }
        self.weights.validate()
    }
}

/// Constant for the first half of training, then linear decay towards zero.
pub fn lr_at_epoch(config: &TrainConfig, epoch: usize) -> Result<f64> {
    let total = config.total_epochs;
    if epoch >= total {
        return Err(Error::Precondition(format!("epoch {epoch} outside 0..{total}")));
    }
    let half = total / 2;
    if epoch < half {
        Ok(config.base_lr)
    } else {
        Ok(config.base_lr * ((total - epoch) as f64 / (total - half) as f64))
    }
}

/// Shuffled mini-batches for one epoch, keyed by `(seed, stream, epoch)`.
/// A trailing batch smaller than 2 is dropped (batch statistics need two).
pub(crate) fn epoch_batches(len: usize, batch_size: usize, seed: u64, stream: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng_for(mix_seed(seed, stream), epoch as u64));
    order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Stacks a whole dataset into one `(N, C, H, W)` tensor.
pub fn dataset_tensor(data: &LoadedDataset, dtype: DType) -> Result<Tensor> {
    if data.is_empty() {
        return Err(Error::Precondition(format!("dataset {} is empty", data.manifest.name)));
    }
    let refs: Vec<_> = data.images.iter().collect();
    batch_to_tensor(&refs, dtype, &Device::Cpu)
}

pub(crate) fn select_rows(all: &Tensor, indices: &[usize]) -> Result<Tensor> {
    let idx: Vec<u32> = indices.iter().map(|&i| i as u32).collect();
    let idx = Tensor::from_vec(idx, indices.len(), all.device())?;
    Ok(all.index_select(&idx, 0)?)
}

/// One logged training step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub values: std::collections::BTreeMap<String, f64>,
}

/// Append-only structured log, one JSON object per line.
pub struct MetricsSink {
    file: Option<File>,
}

impl MetricsSink {
    pub fn none() -> Self {
        Self { file: None }
    }

    pub fn append_to(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self { file: Some(file) })
    }

    pub fn record(&mut self, m: &StepMetrics) -> Result<()> {
        if let Some(f) = &mut self.file {
            let line = serde_json::to_string(m).expect("metrics serialize");
            writeln!(f, "{line}").map_err(|e| Error::io("metrics", e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        let c = TrainConfig::gan_default();
        assert_eq!(lr_at_epoch(&c, 0).unwrap(), 1e-4);
        assert!((lr_at_epoch(&c, 150).unwrap() - 5e-5).abs() < 1e-18);
        assert!((lr_at_epoch(&c, 199).unwrap() - 1e-6).abs() < 1e-18);
        assert!(lr_at_epoch(&c, 200).is_err());
    }

    #[test]
    fn odd_epochs_rejected() {
        let c = TrainConfig { total_epochs: 7, ..TrainConfig::gan_default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn batches_cover_each_index_once() {
        let b = epoch_batches(37, 8, 1, 2, 3);
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, (0..37).collect::<Vec<_>>());
        assert_eq!(b, epoch_batches(37, 8, 1, 2, 3));
        assert_ne!(b, epoch_batches(37, 8, 1, 2, 4));
        // a lone trailing sample is dropped
        assert_eq!(epoch_batches(9, 8, 0, 0, 0).concat().len(), 8);
    }
}
