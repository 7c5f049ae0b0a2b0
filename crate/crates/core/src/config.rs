//! Layered run configuration: built-in defaults, then a TOML config file,
//! then `dotted.key=value` overrides. Every key of a file or override must
//! already exist in the defaults, so typos fail loudly with the full key.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::Value;

use crate::datasets::SyntheticSpec;
use crate::error::{Error, Result};
use crate::gan::{DomainDiscriminatorConfig, GeneratorConfig};
use crate::losses::{AdversarialForm, LossWeights};
use crate::nn::AdamConfig;
use crate::reid::{FeatureSource, ReIdConfig};
use crate::rng::mix_seed;
use crate::training::{GanSetup, TrainConfig};

pub const DESK_CONFIG: &str = include_str!("../configs/desk.cfg");
pub const PAPER_CONFIG: &str = include_str!("../configs/paper.cfg");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub num_identities: usize,
    pub num_cameras: usize,
    pub images_per_identity_per_camera: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSection {
    pub base_width: usize,
    pub residual_blocks: usize,
    pub edge_kernel: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorSection {
    pub base_width: usize,
    pub layers: usize,
    pub leaky_slope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReIdSection {
    pub stem_channels: usize,
    pub stage_channels: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    pub embedding_dim: usize,
    pub feature_source: FeatureSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanSection {
    pub total_epochs: usize,
    pub base_lr: f64,
    pub batch_size: usize,
    pub d_steps_per_g_step: usize,
    pub with_semantic: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub checkpoint_every: usize,
    pub adversarial_form: AdversarialForm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSection {
    pub total_epochs: usize,
    pub base_lr: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub horizontal_flip: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslationSection {
    /// Empty means every target camera.
    pub target_cameras: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    /// `euclidean` or `cosine`; both rank identically on normalized features.
    pub metric: String,
    pub cmc_depth: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub generator: GeneratorSection,
    pub discriminator: DiscriminatorSection,
    pub reid: ReIdSection,
    pub weights: LossWeights,
    pub gan: GanSection,
    pub dsem: ClassifierSection,
    pub reid_train: ClassifierSection,
    pub camera_train: ClassifierSection,
    pub translation: TranslationSection,
    pub protocol: ProtocolSection,
}

/// Salts that give each training stage its own seed.
const DSEM_SALT: u64 = 101;
const GAN_SALT: u64 = 102;
const REID_SALT: u64 = 103;
const CAMERA_SALT: u64 = 104;

impl RunConfig {
    /// The bundled desk-scale configuration.
    pub fn desk() -> Self {
        Self::from_toml_str(DESK_CONFIG).expect("bundled desk config parses")
    }

    pub fn paper() -> Self {
        Self::from_toml_str(PAPER_CONFIG).expect("bundled paper config parses")
    }

    fn from_toml_str(text: &str) -> Result<Self> {
        let value: Value = text.parse::<toml::Table>().map(Value::Table).map_err(|e| Error::Config {
            key: "<file>".into(),
            message: e.to_string(),
        })?;
        from_value(value)
    }

    /// Defaults, then `file` (bundled name or path), then `overrides`.
    pub fn resolve(file: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut value = Value::try_from(Self::desk()).expect("config serializes");
        if let Some(f) = file {
            let text = match f {
                "desk" | "desk.cfg" if !Path::new(f).exists() => DESK_CONFIG.to_string(),
                "paper" | "paper.cfg" if !Path::new(f).exists() => PAPER_CONFIG.to_string(),
                path => std::fs::read_to_string(path).map_err(|e| Error::Config {
                    key: "--config".into(),
                    message: format!("{path}: {e}"),
                })?,
            };
            let layer: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config {
                key: f.to_string(),
                message: e.to_string(),
            })?;
            merge(&mut value, &Value::Table(layer), "")?;
        }
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg = from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| Err(Error::Config { key: key.into(), message });
        if !matches!(self.protocol.metric.as_str(), "euclidean" | "cosine") {
            return bad("protocol.metric", format!("unknown metric {:?} (expected euclidean or cosine)", self.protocol.metric));
        }
        if self.protocol.cmc_depth == 0 {
            return bad("protocol.cmc_depth", "must be at least 1".into());
        }
        for &c in &self.translation.target_cameras {
            if c == 0 || c as usize > self.data.num_cameras {
                return bad("translation.target_cameras", format!("camera {c} outside 1..={}", self.data.num_cameras));
            }
        }
        self.weights.validate()?;
        let prefixed = |section: &str, r: Result<()>| {
            r.map_err(|e| match e {
                Error::Config { key, message } => Error::Config { key: format!("{section}.{key}"), message },
                other => other,
            })
        };
        prefixed("gan", self.gan_train().validate())?;
        prefixed("dsem", self.dsem_train().validate())?;
        prefixed("reid_train", self.reid_train_config().validate())?;
        prefixed("camera_train", self.camera_train_config().validate())?;
        SyntheticSpec::new(
            self.data.num_identities,
            self.data.num_cameras,
            self.data.images_per_identity_per_camera,
            self.data.height,
            self.data.width,
        )
        .map_err(|e| Error::Config { key: "data".into(), message: e.to_string() })?;
        Ok(())
    }

    pub fn synthetic_spec(&self) -> Result<SyntheticSpec> {
        SyntheticSpec::new(
            self.data.num_identities,
            self.data.num_cameras,
            self.data.images_per_identity_per_camera,
            self.data.height,
            self.data.width,
        )
    }

    pub fn gan_train(&self) -> TrainConfig {
        let g = &self.gan;
        TrainConfig {
            total_epochs: g.total_epochs,
            base_lr: g.base_lr,
            batch_size: g.batch_size,
            seed: mix_seed(self.seed, GAN_SALT),
            weights: self.weights,
            d_steps_per_g_step: g.d_steps_per_g_step,
            with_semantic: g.with_semantic,
            adam: AdamConfig { beta1: g.beta1, beta2: g.beta2, eps: 1e-8 },
            checkpoint_every: g.checkpoint_every,
            adversarial_form: g.adversarial_form,
            horizontal_flip: false,
        }
    }

    fn classifier(&self, s: &ClassifierSection, salt: u64) -> TrainConfig {
        TrainConfig {
            total_epochs: s.total_epochs,
            base_lr: s.base_lr,
            batch_size: s.batch_size,
            seed: mix_seed(self.seed, salt),
            adam: AdamConfig { beta1: s.beta1, beta2: s.beta2, eps: 1e-8 },
            horizontal_flip: s.horizontal_flip,
            ..TrainConfig::classifier_default()
        }
    }

    pub fn dsem_train(&self) -> TrainConfig {
        self.classifier(&self.dsem, DSEM_SALT)
    }

    pub fn reid_train_config(&self) -> TrainConfig {
        self.classifier(&self.reid_train, REID_SALT)
    }

    pub fn camera_train_config(&self) -> TrainConfig {
        self.classifier(&self.camera_train, CAMERA_SALT)
    }

    pub fn gan_setup(&self, num_cameras: usize, channels: usize) -> GanSetup {
        let (h, w) = (self.data.height, self.data.width);
        GanSetup {
            generator: GeneratorConfig {
                base_width: self.generator.base_width,
                residual_blocks: self.generator.residual_blocks,
                edge_kernel: self.generator.edge_kernel,
                ..GeneratorConfig::new(h, w, channels, num_cameras + 1)
            },
            discriminator: DomainDiscriminatorConfig {
                base_width: self.discriminator.base_width,
                layers: self.discriminator.layers,
                leaky_slope: self.discriminator.leaky_slope,
                ..DomainDiscriminatorConfig::new(h, w, channels, num_cameras + 1)
            },
            train: self.gan_train(),
        }
    }

    /// Classifier architecture; the class count is set by the trainer.
    pub fn reid_arch(&self, channels: usize) -> ReIdConfig {
        ReIdConfig {
            height: self.data.height,
            width: self.data.width,
            channels,
            stem_channels: self.reid.stem_channels,
            stage_channels: self.reid.stage_channels.clone(),
            blocks_per_stage: self.reid.blocks_per_stage.clone(),
            embedding_dim: self.reid.embedding_dim,
            num_classes: 1,
            use_ibn: false,
            feature_source: self.reid.feature_source,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn from_value(value: Value) -> Result<RunConfig> {
    RunConfig::deserialize(value).map_err(|e| Error::Config {
        key: "<config>".into(),
        message: e.to_string(),
    })
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

/// Overlays `layer` onto `base`, refusing keys the base does not have.
fn merge(base: &mut Value, layer: &Value, prefix: &str) -> Result<()> {
    match (base, layer) {
        (Value::Table(b), Value::Table(l)) => {
            for (k, v) in l {
                let key = join(prefix, k);
                let slot = b.get_mut(k).ok_or_else(|| Error::Config {
                    key: key.clone(),
                    message: "unknown configuration key".into(),
                })?;
                merge(slot, v, &key)?;
            }
            Ok(())
        }
        (slot @ Value::Table(_), _) => Err(Error::Config {
            key: prefix.to_string(),
            message: format!("expected a table, got {}", slot.type_str()),
        }),
        (slot, v) => {
            *slot = coerce(slot, v.clone(), prefix)?;
            Ok(())
        }
    }
}

/// Integers are accepted where floats are expected; other type changes
/// are errors naming the key.
fn coerce(old: &Value, new: Value, key: &str) -> Result<Value> {
    match (old, new) {
        (Value::Float(_), Value::Integer(i)) => Ok(Value::Float(i as f64)),
        (o, n) if std::mem::discriminant(o) == std::mem::discriminant(&n) => Ok(n),
        (o, n) => Err(Error::Config {
            key: key.to_string(),
            message: format!("expected {}, got {}", o.type_str(), n.type_str()),
        }),
    }
}

fn apply_override(root: &mut Value, text: &str) -> Result<()> {
    let (key, raw) = text.split_once('=').ok_or_else(|| Error::Config {
        key: text.to_string(),
        message: "override must look like dotted.key=value".into(),
    })?;
    let key = key.trim();
    let raw = raw.trim();
    let parsed = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let mut slot = &mut *root;
    for part in key.split('.') {
        slot = match slot {
            Value::Table(t) => t.get_mut(part),
            _ => None,
        }
        .ok_or_else(|| Error::Config {
            key: key.to_string(),
            message: "unknown configuration key".into(),
        })?;
    }
    if slot.is_table() {
        return Err(Error::Config { key: key.to_string(), message: "cannot override a whole section".into() });
    }
    *slot = coerce(slot, parsed, key)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_configs_parse_and_validate() {
        RunConfig::desk().validate().unwrap();
        RunConfig::paper().validate().unwrap();
        assert_eq!(RunConfig::paper().data.height, 128);
        assert_eq!(RunConfig::paper().gan.total_epochs, 200);
    }

    #[test]
    fn override_sets_nested_value() {
        let c = RunConfig::resolve(None, &["weights.lambda_sem=0".into(), "gan.base_lr=3e-4".into()]).unwrap();
        assert_eq!(c.weights.lambda_sem, 0.0);
        assert_eq!(c.gan.base_lr, 3e-4);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::resolve(None, &["gan.bogus=1".into()]).unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "gan.bogus"));
    }

    #[test]
    fn bad_metric_is_named() {
        let err = RunConfig::resolve(None, &["protocol.metric=bogus".into()]).unwrap_err();
        assert!(err.to_string().contains("protocol.metric"));
    }

    #[test]
    fn wrong_type_is_named() {
        let err = RunConfig::resolve(None, &["gan.total_epochs=\"many\"".into()]).unwrap_err();
        assert!(err.to_string().contains("gan.total_epochs"));
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = RunConfig::resolve(Some("paper.cfg"), &["seed=9".into()]).unwrap();
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }
}
