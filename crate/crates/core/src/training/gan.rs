use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{dataset_tensor, epoch_batches, lr_at_epoch, select_rows, MetricsSink, StepMetrics, TrainConfig};
use crate::datasets::LoadedDataset;
use crate::error::{Error, Result};
use crate::gan::{domain_discriminator_forward, generator_forward, DomainDiscriminatorConfig, DomainLabel, GeneratorConfig};
use crate::losses::{
    adversarial_loss, discriminator_objective, domain_classification_loss, generator_adversarial_term,
    generator_objective, identity_semantic_loss, reconstruction_loss, scalar, DiscriminatorParts, GeneratorParts,
};
use crate::nn::{Adam, Archive, Architecture, ModelParams};
use crate::reid::semantic_discriminator_forward;
use crate::rng::{mix_seed, rng_for};

const BATCH_STREAM: u64 = 0x6A17;
const DOMAIN_STREAM: u64 = 0xD0E5;
const CHECKPOINT_VERSION: u64 = 1;

/// Everything that fixes a GAN run: both architectures and the schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanSetup {
    pub generator: GeneratorConfig,
    pub discriminator: DomainDiscriminatorConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, Default)]
pub struct GanRunOptions {
    /// Directory for `checkpoint.safetensors` at the configured cadence.
    pub checkpoint_dir: Option<PathBuf>,
    /// Append-only metrics log.
    pub metrics_path: Option<PathBuf>,
    /// Continue from this state instead of initializing.
    pub resume: Option<Checkpoint>,
    /// Stop once this many epochs are complete (simulates an interruption).
    pub stop_after: Option<usize>,
}

/// Complete, resumable state of a GAN run.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub setup: GanSetup,
    pub generator: ModelParams,
    pub discriminator: ModelParams,
    pub semantic: ModelParams,
    pub generator_opt: Adam,
    pub discriminator_opt: Adam,
    /// Number of completed epochs.
    pub epoch: usize,
    pub history: Vec<StepMetrics>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    version: u64,
    setup: GanSetup,
    epoch: usize,
    /// Per-epoch streams are derived from `(seed, epoch)`, so this pair is
    /// the whole random state.
    rng: RngState,
    history: Vec<StepMetrics>,
}

#[derive(Serialize, Deserialize)]
struct RngState {
    seed: u64,
    next_epoch: usize,
}

impl Checkpoint {
    pub fn is_complete(&self) -> bool {
        self.epoch >= self.setup.train.total_epochs
    }

    pub fn to_archive(&self) -> Result<Archive> {
        let mut a = Archive::new();
        self.generator.write_into(&mut a, "generator/")?;
        self.discriminator.write_into(&mut a, "discriminator/")?;
        self.semantic.write_into(&mut a, "semantic/")?;
        self.generator_opt.write_into(&mut a, "generator_opt/");
        self.discriminator_opt.write_into(&mut a, "discriminator_opt/");
        let header = CheckpointHeader {
            version: CHECKPOINT_VERSION,
            setup: self.setup.clone(),
            epoch: self.epoch,
            rng: RngState { seed: self.setup.train.seed, next_epoch: self.epoch },
            history: self.history.clone(),
        };
        a.set_header("run", &header);
        Ok(a)
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        let h: CheckpointHeader = a.get_header("run")?;
        if h.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {}", h.version)));
        }
        Ok(Self {
            setup: h.setup,
            generator: ModelParams::read_from(a, "generator/")?,
            discriminator: ModelParams::read_from(a, "discriminator/")?,
            semantic: ModelParams::read_from(a, "semantic/")?,
            generator_opt: Adam::read_from(a, "generator_opt/")?,
            discriminator_opt: Adam::read_from(a, "discriminator_opt/")?,
            epoch: h.epoch,
            history: h.history,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(&Archive::load(path)?)
    }

    /// Mean of one logged scalar over the steps in `[from, to)` fractions of
    /// the history that recorded it.
    pub fn mean_metric(&self, name: &str, from: f64, to: f64) -> Option<f64> {
        let vals: Vec<f64> = self.history.iter().filter_map(|m| m.values.get(name).copied()).collect();
        let lo = (vals.len() as f64 * from).floor() as usize;
        let hi = ((vals.len() as f64 * to).ceil() as usize).min(vals.len());
        (hi > lo).then(|| vals[lo..hi].iter().sum::<f64>() / (hi - lo) as f64)
    }
}

struct Pool {
    images: Tensor,
    /// Domain of each pooled image: 0 for source, camera for target.
    domains: Vec<usize>,
    /// Semantic-discriminator class of each source image (0 for target).
    classes: Vec<usize>,
    num_domains: usize,
}

fn build_pool(source: &LoadedDataset, target: &LoadedDataset, semantic: &ModelParams, setup: &GanSetup) -> Result<Pool> {
    let cams = target.manifest.num_cameras;
    let num_domains = cams + 1;
    if setup.generator.num_domains != num_domains || setup.discriminator.num_domains != num_domains {
        return Err(Error::Config {
            key: "generator.num_domains".into(),
            message: format!(
                "target set has {cams} cameras ({num_domains} domains) but the networks are configured for {}/{}",
                setup.generator.num_domains, setup.discriminator.num_domains
            ),
        });
    }
    if source.manifest.image_shape() != target.manifest.image_shape() {
        return Err(Error::shape(
            format!("{:?}", source.manifest.image_shape()),
            format!("{:?}", target.manifest.image_shape()),
        ));
    }
    let vocab = semantic
        .vocabulary
        .as_ref()
        .ok_or_else(|| Error::Vocabulary("semantic discriminator has no vocabulary".into()))?;
    if *vocab != source.manifest.identities() {
        return Err(Error::Vocabulary(
            "semantic discriminator was not trained on the source identities".into(),
        ));
    }
    let mut domains = Vec::new();
    let mut classes = Vec::new();
    for r in &source.manifest.records {
        domains.push(0);
        classes.push(vocab.binary_search(&r.identity).expect("checked vocabulary"));
    }
    for r in &target.manifest.records {
        if r.camera == 0 || r.camera as usize > cams {
            return Err(Error::CameraOutOfRange { camera: r.camera as i64, num_cameras: cams });
        }
        domains.push(r.camera as usize);
        classes.push(0);
    }
    let images = Tensor::cat(&[dataset_tensor(source, DType::F32)?, dataset_tensor(target, DType::F32)?], 0)?;
    Ok(Pool { images, domains, classes, num_domains })
}

fn labels(indices: &[usize], num_domains: usize) -> Result<Vec<DomainLabel>> {
    indices.iter().map(|&d| DomainLabel::new(d, num_domains)).collect()
}

/// Alternates discriminator updates (real/fake plus real-image domain
/// classification) with generator updates (adversarial, fake-image domain
/// classification, cycle reconstruction and, when enabled, the identity
/// loss from the frozen semantic discriminator on source-originated fakes).
pub fn train_ipgan(
    source_train: &LoadedDataset,
    target_train: &LoadedDataset,
    semantic: &ModelParams,
    setup: &GanSetup,
    options: GanRunOptions,
) -> Result<Checkpoint> {
    let cfg = &setup.train;
    cfg.validate()?;
    let pool = build_pool(source_train, target_train, semantic, setup)?;
    let semantic_before = semantic.to_bytes()?;
    let frozen_semantic = semantic.frozen();

    let mut state = match options.resume {
        Some(c) => {
            if c.setup != *setup {
                return Err(Error::Checkpoint("resumed checkpoint was made with a different configuration".into()));
            }
            c
        }
        None => Checkpoint {
            setup: setup.clone(),
            generator: ModelParams::initialize(Architecture::Generator(setup.generator.clone()), mix_seed(cfg.seed, 1), DType::F32)?,
            discriminator: ModelParams::initialize(
                Architecture::DomainDiscriminator(setup.discriminator.clone()),
                mix_seed(cfg.seed, 2),
                DType::F32,
            )?,
            semantic: semantic.snapshot()?,
            generator_opt: Adam::new(cfg.adam),
            discriminator_opt: Adam::new(cfg.adam),
            epoch: 0,
            history: Vec::new(),
        },
    };
    let semantic_on = cfg.semantic_active();
    state.generator.metadata.insert("with_semantic".into(), json!(semantic_on));
    state.generator.metadata.insert("adversarial_form".into(), json!(cfg.adversarial_form));
    let mut sink = match &options.metrics_path {
        Some(p) => MetricsSink::append_to(p)?,
        None => MetricsSink::none(),
    };
    let w = cfg.weights;
    let last_epoch = options.stop_after.unwrap_or(cfg.total_epochs).min(cfg.total_epochs);

    while state.epoch < last_epoch {
        let epoch = state.epoch;
        let lr = lr_at_epoch(cfg, epoch)?;
        let mut domain_rng = rng_for(mix_seed(cfg.seed, DOMAIN_STREAM), epoch as u64);
        let batches = epoch_batches(pool.domains.len(), cfg.batch_size, cfg.seed, BATCH_STREAM, epoch);
        for (step, batch) in batches.iter().enumerate() {
            let x = select_rows(&pool.images, batch)?;
            let original: Vec<usize> = batch.iter().map(|&i| pool.domains[i]).collect();
            let requested: Vec<usize> = batch.iter().map(|_| domain_rng.random_range(0..pool.num_domains)).collect();
            let original_labels = labels(&original, pool.num_domains)?;
            let requested_labels = labels(&requested, pool.num_domains)?;
            let mut values = BTreeMap::new();

            // discriminator step; the generator is only read
            let fake = generator_forward(&state.generator.frozen(), &x, &requested_labels)?;
            let (adv_real, dom_real) = domain_discriminator_forward(&state.discriminator, &x)?;
            let (adv_fake, _) = domain_discriminator_forward(&state.discriminator, &fake)?;
            let l_adv = adversarial_loss(&adv_real, &adv_fake)?;
            let l_dom_real = domain_classification_loss(&dom_real, &original)?;
            let d_obj = discriminator_objective(
                &DiscriminatorParts { adversarial: l_adv.clone(), domain_real: l_dom_real.clone() },
                &w,
            )?;
            let grads = d_obj.backward()?;
            state.discriminator_opt.step(&state.discriminator, &grads, lr)?;
            values.insert("d_adv".to_string(), scalar(&l_adv)?);
            values.insert("d_dom_real".to_string(), scalar(&l_dom_real)?);
            values.insert("d_objective".to_string(), scalar(&d_obj)?);

            if (step + 1) % cfg.d_steps_per_g_step == 0 {
                let d_view = state.discriminator.frozen();
                let fake = generator_forward(&state.generator, &x, &requested_labels)?;
                let (adv_fake, dom_fake) = domain_discriminator_forward(&d_view, &fake)?;
                let l_adv = generator_adversarial_term(&adv_fake, cfg.adversarial_form)?;
                let l_dom_fake = domain_classification_loss(&dom_fake, &requested)?;
                let rec = generator_forward(&state.generator, &fake, &original_labels)?;
                let l_rec = reconstruction_loss(&x, &rec)?;
                let l_sem = if semantic_on {
                    let mask: Vec<bool> = original.iter().map(|&d| d == 0).collect();
                    let classes: Vec<usize> = batch.iter().map(|&i| pool.classes[i]).collect();
                    let logits = semantic_discriminator_forward(&frozen_semantic, &fake)?;
                    Some(identity_semantic_loss(&logits, &classes, Some(&mask))?)
                } else {
                    None
                };
                let parts = GeneratorParts {
                    adversarial: l_adv.clone(),
                    domain_fake: l_dom_fake.clone(),
                    reconstruction: l_rec.clone(),
                    semantic: l_sem.clone(),
                };
                let g_obj = generator_objective(&parts, &w, semantic_on)?;
                let grads = g_obj.backward()?;
                state.generator_opt.step(&state.generator, &grads, lr)?;
                values.insert("g_adv".to_string(), scalar(&l_adv)?);
                values.insert("g_dom_fake".to_string(), scalar(&l_dom_fake)?);
                values.insert("g_rec".to_string(), scalar(&l_rec)?);
                if let Some(s) = &l_sem {
                    values.insert("g_sem".to_string(), scalar(s)?);
                }
                values.insert("g_objective".to_string(), scalar(&g_obj)?);
            }
            let m = StepMetrics { epoch, step, lr, values };
            sink.record(&m)?;
            state.history.push(m);
        }
        state.epoch += 1;
        log::info!(
            "gan epoch {}/{}: rec {:.4}",
            state.epoch,
            cfg.total_epochs,
            state.mean_metric("g_rec", 1.0 - 1.0 / state.epoch as f64, 1.0).unwrap_or(f64::NAN)
        );
        if let Some(dir) = &options.checkpoint_dir {
            let due = cfg.checkpoint_every > 0 && state.epoch % cfg.checkpoint_every == 0;
            if due || state.epoch == last_epoch {
                state.save(&dir.join("checkpoint.safetensors"))?;
            }
        }
    }
    if semantic.to_bytes()? != semantic_before {
        return Err(Error::Precondition("semantic discriminator changed during GAN training".into()));
    }
    Ok(state)
}
