//! Identity-preserving multi-domain image translation for cross-domain
//! person re-identification.
//!
//! A single conditional generator translates labeled source-domain images
//! into the style of every target camera, while a frozen identity
//! classifier keeps the translated images recognisable as their source
//! identity. The translated set trains a re-ID classifier (optionally with
//! instance normalization in its shallow stages), which is then scored with
//! the single-query CMC / mAP protocol.
//!
//! Module map:
//!
//! * [`datasets`]: synthetic multi-camera corpus, real directory ingestion,
//!   manifest files.
//! * [`gan`]: conditional generator and two-headed domain discriminator.
//! * [`reid`]: IDE-style classifier, IBN variant, instance normalization.
//! * [`losses`]: adversarial / domain / reconstruction / semantic losses and
//!   the two training objectives.
//! * [`training`]: learning-rate schedule, classifier training, GAN training,
//!   checkpoints.
//! * [`translation`]: applies a trained generator to a labeled set.
//! * [`evaluation`]: feature extraction, CMC / mAP, classification audits.
//! * [`cli`]: the `ipgan` command-line driver.

pub mod cli;
pub mod config;
pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod gan;
pub mod image;
pub mod losses;
pub mod nn;
pub mod reid;
pub mod rng;
pub mod training;
pub mod translation;

pub use error::{Error, Result};
pub use image::ImageTensor;
