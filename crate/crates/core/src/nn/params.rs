use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::archive::Archive;
use crate::error::{Error, Result};
use crate::gan::{DomainDiscriminatorConfig, GeneratorConfig};
use crate::reid::ReIdConfig;
use crate::rng::{hash_name, rng_for};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

/// Network family plus its configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Generator(GeneratorConfig),
    DomainDiscriminator(DomainDiscriminatorConfig),
    ReId(ReIdConfig),
}

impl Architecture {
    pub fn name(&self) -> &'static str {
        match self {
            Architecture::Generator(_) => "generator",
            Architecture::DomainDiscriminator(_) => "domain_discriminator",
            Architecture::ReId(_) => "reid",
        }
    }
}

/// How a parameter is initialized.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Init {
    /// `U(-bound, bound)`
    Uniform(f64),
    Const(f64),
}

pub(crate) struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn uniform(name: impl Into<String>, shape: &[usize], fan_in: usize) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init: Init::Uniform(1.0 / (fan_in as f64).sqrt()),
        }
    }

    pub fn constant(name: impl Into<String>, shape: &[usize], value: f64) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init: Init::Const(value),
        }
    }
}

/// A named, serializable parameter set for one network.
///
/// Trainable weights and running statistics are held in [`Var`]s so that
/// clones share storage: an optimizer step on one handle is visible through
/// every clone, including [`ModelParams::frozen`] views.
#[derive(Clone, Debug)]
pub struct ModelParams {
    arch: Architecture,
    dtype: DType,
    weights: BTreeMap<String, Var>,
    buffers: BTreeMap<String, Var>,
    frozen: bool,
    /// Class index to dataset label, for classifiers.
    pub vocabulary: Option<Vec<i64>>,
    /// Free-form provenance (training accuracy, objective flags, ...).
    pub metadata: BTreeMap<String, Value>,
}

impl ModelParams {
    /// Draws every parameter from a stream keyed by `(seed, parameter name)`,
    /// so adding or removing a layer leaves the other layers' values alone.
    pub fn initialize(arch: Architecture, seed: u64, dtype: DType) -> Result<Self> {
        let (weights, buffers) = match &arch {
            Architecture::Generator(c) => (crate::gan::generator_param_specs(c)?, vec![]),
            Architecture::DomainDiscriminator(c) => (crate::gan::discriminator_param_specs(c)?, vec![]),
            Architecture::ReId(c) => crate::reid::param_specs(c)?,
        };
        let device = Device::Cpu;
        let make = |spec: &ParamSpec| -> Result<Var> {
            let n: usize = spec.shape.iter().product();
            let values: Vec<f64> = match spec.init {
                Init::Const(v) => vec![v; n],
                Init::Uniform(bound) => {
                    let mut rng = rng_for(seed, hash_name(&spec.name));
                    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                }
            };
            let t = Tensor::from_vec(values, spec.shape.clone(), &device)?.to_dtype(dtype)?;
            Ok(Var::from_tensor(&t)?)
        };
        let mut w = BTreeMap::new();
        for s in &weights {
            if w.insert(s.name.clone(), make(s)?).is_some() {
                return Err(Error::Checkpoint(format!("duplicate parameter {}", s.name)));
            }
        }
        let mut b = BTreeMap::new();
        for s in &buffers {
            b.insert(s.name.clone(), make(s)?);
        }
        Ok(Self {
            arch,
            dtype,
            weights: w,
            buffers: b,
            frozen: false,
            vocabulary: None,
            metadata: BTreeMap::new(),
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// A view sharing storage whose weights never record gradients.
    pub fn frozen(&self) -> Self {
        Self {
            frozen: true,
            ..self.clone()
        }
    }

    /// A deep copy with its own storage.
    pub fn snapshot(&self) -> Result<Self> {
        let copy = |m: &BTreeMap<String, Var>| -> Result<BTreeMap<String, Var>> {
            m.iter()
                .map(|(k, v)| Ok((k.clone(), Var::from_tensor(&v.as_tensor().copy()?)?)))
                .collect()
        };
        Ok(Self {
            weights: copy(&self.weights)?,
            buffers: copy(&self.buffers)?,
            ..self.clone()
        })
    }

    pub fn weight(&self, name: &str) -> Result<Tensor> {
        let v = self
            .weights
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("{}: missing parameter {name}", self.arch.name())))?;
        Ok(if self.frozen {
            v.as_detached_tensor()
        } else {
            v.as_tensor().clone()
        })
    }

    pub fn buffer(&self, name: &str) -> Result<Tensor> {
        self.buffers
            .get(name)
            .map(Var::as_detached_tensor)
            .ok_or_else(|| Error::Checkpoint(format!("{}: missing buffer {name}", self.arch.name())))
    }

    pub(crate) fn set_buffer(&self, name: &str, value: &Tensor) -> Result<()> {
        let v = self
            .buffers
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing buffer {name}")))?;
        Ok(v.set(&value.detach())?)
    }

    pub fn has_weight(&self, name: &str) -> bool {
        self.weights.contains_key(name)
    }

    pub fn weight_names(&self) -> impl Iterator<Item = &str> {
        self.weights.keys().map(String::as_str)
    }

    pub fn buffer_names(&self) -> impl Iterator<Item = &str> {
        self.buffers.keys().map(String::as_str)
    }

    pub fn vars(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.weights.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_parameters(&self) -> usize {
        self.weights.values().map(|v| v.elem_count()).sum()
    }

    /// Flattened values of one weight, for inspection and tests.
    pub fn weight_values(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self
            .weight(name)?
            .to_dtype(DType::F64)?
            .flatten_all()?
            .to_vec1::<f64>()?)
    }

    pub(crate) fn write_into(&self, archive: &mut Archive, prefix: &str) -> Result<()> {
        for (k, v) in &self.weights {
            archive.tensors.insert(format!("{prefix}weight/{k}"), v.as_detached_tensor());
        }
        for (k, v) in &self.buffers {
            archive.tensors.insert(format!("{prefix}buffer/{k}"), v.as_detached_tensor());
        }
        archive.set_header(
            &format!("{prefix}model"),
            &serde_json::json!({
                "arch": self.arch,
                "dtype": format!("{:?}", self.dtype),
                "vocabulary": self.vocabulary,
                "metadata": self.metadata,
            }),
        );
        Ok(())
    }

    pub(crate) fn read_from(archive: &Archive, prefix: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            arch: Architecture,
            dtype: String,
            vocabulary: Option<Vec<i64>>,
            metadata: BTreeMap<String, Value>,
        }
        let h: Header = archive.get_header(&format!("{prefix}model"))?;
        let dtype = match h.dtype.as_str() {
            "F32" => DType::F32,
            "F64" => DType::F64,
            other => return Err(Error::Checkpoint(format!("unsupported dtype {other}"))),
        };
        // The architecture fixes the parameter inventory; check it matches.
        let reference = Self::initialize(h.arch.clone(), 0, dtype)?;
        let take = |kind: &str, names: Vec<&str>| -> Result<BTreeMap<String, Var>> {
            names
                .into_iter()
                .map(|n| {
                    let t = archive.tensor(&format!("{prefix}{kind}/{n}"))?;
                    Ok((n.to_string(), Var::from_tensor(&t.to_dtype(dtype)?)?))
                })
                .collect()
        };
        let weights = take("weight", reference.weight_names().collect())?;
        let buffers = take("buffer", reference.buffer_names().collect())?;
        for (n, v) in weights.iter().chain(&buffers) {
            let expected = reference
                .weights
                .get(n)
                .or_else(|| reference.buffers.get(n))
                .expect("same inventory");
            if v.dims() != expected.dims() {
                return Err(Error::Checkpoint(format!(
                    "{n}: shape {:?} does not match architecture {:?}",
                    v.dims(),
                    expected.dims()
                )));
            }
        }
        Ok(Self {
            arch: h.arch,
            dtype,
            weights,
            buffers,
            frozen: false,
            vocabulary: h.vocabulary,
            metadata: h.metadata,
        })
    }

    pub fn to_archive(&self) -> Result<Archive> {
        let mut a = Archive::new();
        self.write_into(&mut a, "")?;
        Ok(a)
    }

    pub fn from_archive(archive: &Archive) -> Result<Self> {
        Self::read_from(archive, "")
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.to_archive()?.to_bytes()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(&Archive::load(path)?)
    }

    /// Element-wise equality of every weight and buffer.
    pub fn same_values(&self, other: &ModelParams) -> Result<bool> {
        if self.weights.len() != other.weights.len() || self.buffers.len() != other.buffers.len() {
            return Ok(false);
        }
        for (a, b) in [(&self.weights, &other.weights), (&self.buffers, &other.buffers)] {
            for (k, v) in a {
                let Some(w) = b.get(k) else { return Ok(false) };
                if v.dims() != w.dims() {
                    return Ok(false);
                }
                let x = v.as_tensor().to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
                let y = w.as_tensor().to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
                if x != y {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}
