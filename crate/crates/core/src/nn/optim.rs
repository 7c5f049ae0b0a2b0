use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::archive::Archive;
use super::params::ModelParams;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    /// GAN convention.
    pub const GAN: AdamConfig = AdamConfig {
        beta1: 0.5,
        beta2: 0.999,
        eps: 1e-8,
    };
    /// Classifier convention.
    pub const CLASSIFIER: AdamConfig = AdamConfig {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
}

/// Adaptive moment estimation with bias correction. Moments are keyed by
/// parameter name so the state serializes alongside the parameters.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every weight of `params` that has a gradient.
    pub fn step(&mut self, params: &ModelParams, grads: &GradStore, lr: f64) -> Result<()> {
        if params.is_frozen() {
            return Err(Error::Precondition("optimizer step on frozen parameters".into()));
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (name, var) in params.vars() {
            let Some(g) = grads.get(var.as_tensor()) else { continue };
            // gradients carry the backward graph; keeping them would chain every step together
            let g = &g.detach();
            let m = match self.first.get(name) {
                Some(m) => ((m * beta1)? + (g * (1.0 - beta1))?)?,
                None => (g * (1.0 - beta1))?,
            };
            let v = match self.second.get(name) {
                Some(v) => ((v * beta2)? + (g.sqr()? * (1.0 - beta2))?)?,
                None => (g.sqr()? * (1.0 - beta2))?,
            };
            let update = ((&m / c1)? / ((&v / c2)?.sqrt()? + eps)?)?;
            var.set(&(var.as_tensor() - (update * lr)?)?)?;
            self.first.insert(name.to_string(), m);
            self.second.insert(name.to_string(), v);
        }
        Ok(())
    }

    pub(crate) fn write_into(&self, archive: &mut Archive, prefix: &str) {
        for (k, v) in &self.first {
            archive.tensors.insert(format!("{prefix}m/{k}"), v.clone());
        }
        for (k, v) in &self.second {
            archive.tensors.insert(format!("{prefix}v/{k}"), v.clone());
        }
        archive.set_header(
            &format!("{prefix}adam"),
            &serde_json::json!({ "config": self.config, "step": self.step }),
        );
    }

    pub(crate) fn read_from(archive: &Archive, prefix: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            config: AdamConfig,
            step: u64,
        }
        let h: Header = archive.get_header(&format!("{prefix}adam"))?;
        let mut first = BTreeMap::new();
        let mut second = BTreeMap::new();
        for (k, t) in &archive.tensors {
            if let Some(rest) = k.strip_prefix(prefix) {
                if let Some(n) = rest.strip_prefix("m/") {
                    first.insert(n.to_string(), t.clone());
                } else if let Some(n) = rest.strip_prefix("v/") {
                    second.insert(n.to_string(), t.clone());
                }
            }
        }
        Ok(Self {
            config: h.config,
            step: h.step,
            first,
            second,
        })
    }
}
