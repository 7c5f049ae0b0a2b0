//! Single-file archive of named tensors plus a JSON header, stored as
//! safetensors. The header lives under one metadata key so that the byte
//! layout is a pure function of the contents.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde_json::Value;

use crate::error::{Error, Result};

pub const ARCHIVE_FORMAT: &str = "ipgan-archive";
pub const ARCHIVE_VERSION: u64 = 1;
const HEADER_KEY: &str = "ipgan";

#[derive(Clone, Debug, Default)]
pub struct Archive {
    pub tensors: BTreeMap<String, Tensor>,
    pub header: BTreeMap<String, Value>,
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payloads: Vec<(String, Dtype, Vec<usize>, Vec<u8>)> = Vec::new();
        for (name, t) in &self.tensors {
            let shape = t.dims().to_vec();
            let (dtype, bytes) = match t.dtype() {
                DType::F32 => (
                    Dtype::F32,
                    t.flatten_all()?.to_vec1::<f32>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
                ),
                DType::F64 => (
                    Dtype::F64,
                    t.flatten_all()?.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
                ),
                DType::U32 => (
                    Dtype::U32,
                    t.flatten_all()?.to_vec1::<u32>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
                ),
                other => return Err(Error::Checkpoint(format!("unsupported dtype {other:?} for {name}"))),
            };
            payloads.push((name.clone(), dtype, shape, bytes));
        }
        let views = payloads
            .iter()
            .map(|(name, dtype, shape, bytes)| {
                TensorView::new(*dtype, shape.clone(), bytes)
                    .map(|v| (name.as_str(), v))
                    .map_err(|e| Error::Checkpoint(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut header = self.header.clone();
        header.insert("format".into(), Value::from(ARCHIVE_FORMAT));
        header.insert("version".into(), Value::from(ARCHIVE_VERSION));
        let meta: HashMap<String, String> =
            [(HEADER_KEY.to_string(), serde_json::to_string(&header).expect("json header"))].into();
        safetensors::serialize(views, Some(meta)).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8], device: &Device) -> Result<Self> {
        let st = SafeTensors::deserialize(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let (_, meta) = SafeTensors::read_metadata(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let raw = meta
            .metadata()
            .as_ref()
            .and_then(|m| m.get(HEADER_KEY))
            .ok_or_else(|| Error::Checkpoint("missing archive header".into()))?;
        let header: BTreeMap<String, Value> =
            serde_json::from_str(raw).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if header.get("format").and_then(Value::as_str) != Some(ARCHIVE_FORMAT) {
            return Err(Error::Checkpoint("not an ipgan archive".into()));
        }
        let version = header.get("version").and_then(Value::as_u64);
        if version != Some(ARCHIVE_VERSION) {
            return Err(Error::Checkpoint(format!(
                "archive version {version:?} unsupported (expected {ARCHIVE_VERSION})"
            )));
        }
        let mut tensors = BTreeMap::new();
        for name in st.names() {
            let view = st.tensor(name).map_err(|e| Error::Checkpoint(e.to_string()))?;
            let shape = view.shape().to_vec();
            let data = view.data();
            let t = match view.dtype() {
                Dtype::F32 => {
                    let v: Vec<f32> = data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
                    Tensor::from_vec(v, shape, device)?
                }
                Dtype::F64 => {
                    let v: Vec<f64> = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                    Tensor::from_vec(v, shape, device)?
                }
                Dtype::U32 => {
                    let v: Vec<u32> = data.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
                    Tensor::from_vec(v, shape, device)?
                }
                other => return Err(Error::Checkpoint(format!("unsupported dtype {other:?} for {name}"))),
            };
            tensors.insert(name.to_string(), t);
        }
        Ok(Self { tensors, header })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let bytes = self.to_bytes()?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &Device::Cpu)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    }

    pub fn get_header<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self
            .header
            .get(key)
            .ok_or_else(|| Error::Checkpoint(format!("missing header field {key}")))?;
        serde_json::from_value(v.clone()).map_err(|e| Error::Checkpoint(format!("header field {key}: {e}")))
    }

    pub fn set_header<T: serde::Serialize>(&mut self, key: &str, value: &T) {
        self.header
            .insert(key.to_string(), serde_json::to_value(value).expect("serializable header"));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_deterministic_bytes() {
        let dev = Device::Cpu;
        let mut a = Archive::new();
        a.tensors.insert("w".into(), Tensor::new(&[[1f32, 2.], [3., 4.]], &dev).unwrap());
        a.tensors.insert("d".into(), Tensor::new(&[0.5f64, -1.0], &dev).unwrap());
        a.set_header("epoch", &3u32);
        a.set_header("zeta", &"last");
        let bytes = a.to_bytes().unwrap();
        assert_eq!(bytes, a.clone().to_bytes().unwrap());
        let b = Archive::from_bytes(&bytes, &dev).unwrap();
        assert_eq!(b.get_header::<u32>("epoch").unwrap(), 3);
        assert_eq!(b.tensor("w").unwrap().to_vec2::<f32>().unwrap(), vec![vec![1., 2.], vec![3., 4.]]);
        assert_eq!(b.tensor("d").unwrap().to_vec1::<f64>().unwrap(), vec![0.5, -1.0]);
        assert_eq!(b.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn rejects_foreign_files() {
        assert!(Archive::from_bytes(b"not a safetensors file", &Device::Cpu).is_err());
    }
}
