//! Checkpoint files.
//!
//! A checkpoint is a single safetensors archive. Tensor keys:
//!
//! - `param.<module path>`: network parameters (`param.rgb.stage1.conv1.weight`, ...)
//! - `adam.m.<module path>`, `adam.v.<module path>`: optimizer moments
//!
//! The header carries one metadata entry, `cdinet`, holding a JSON
//! [`CheckpointMeta`] (format version, epoch, iteration, network and training
//! configuration, optimizer step). Serialization is deterministic, so
//! save -> load -> save reproduces the file byte for byte.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::{Dtype, TensorView, View};
use serde::{Deserialize, Serialize};

use crate::network::{Network, NetworkConfig};
use crate::params::ParamStore;
use crate::train::{AdamState, TrainConfig};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const META_KEY: &str = "cdinet";
const PARAM_PREFIX: &str = "param.";
const ADAM_M_PREFIX: &str = "adam.m.";
const ADAM_V_PREFIX: &str = "adam.v.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub epoch: usize,
    pub iteration: usize,
    /// Square input resolution the network was trained at.
    pub image_size: usize,
    pub seed: u64,
    pub dtype: String,
    pub network: NetworkConfig,
    pub train: Option<TrainConfig>,
    pub adam_step: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: BTreeMap<String, Tensor>,
    pub adam: Option<AdamState>,
}

impl Checkpoint {
    /// Snapshot of a network (and optionally its optimizer) at `epoch`.
    pub fn capture(
        net: &Network,
        train: Option<&TrainConfig>,
        adam: Option<&AdamState>,
        epoch: usize,
        iteration: usize,
        image_size: usize,
    ) -> Result<Self> {
        let store = net.store();
        let params = store
            .vars()
            .map(|(name, var)| Ok((name.to_string(), var.as_tensor().copy()?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(Self {
            meta: CheckpointMeta {
                format_version: FORMAT_VERSION,
                epoch,
                iteration,
                image_size,
                seed: store.seed(),
                dtype: dtype_name(store.dtype()).to_string(),
                network: net.config().clone(),
                train: train.cloned(),
                adam_step: adam.map(|a| a.step),
            },
            params,
            adam: adam.cloned(),
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = BTreeMap::new();
        for (name, t) in &self.params {
            tensors.insert(format!("{PARAM_PREFIX}{name}"), t.clone());
        }
        if let Some(adam) = &self.adam {
            for (name, t) in &adam.m {
                tensors.insert(format!("{ADAM_M_PREFIX}{name}"), t.clone());
            }
            for (name, t) in &adam.v {
                tensors.insert(format!("{ADAM_V_PREFIX}{name}"), t.clone());
            }
        }
        let meta = HashMap::from([(META_KEY.to_string(), serde_json::to_string(&self.meta)?)]);
        serialize(&tensors, Some(meta))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8], device: &Device) -> Result<Self> {
        let (_, header) = safetensors::SafeTensors::read_metadata(bytes)?;
        let meta_json = header
            .metadata()
            .as_ref()
            .and_then(|m| m.get(META_KEY))
            .ok_or_else(|| Error::Data("checkpoint header lacks `cdinet` metadata".into()))?;
        let meta: CheckpointMeta = serde_json::from_str(meta_json)?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint format version {}",
                meta.format_version
            )));
        }
        let archive = safetensors::SafeTensors::deserialize(bytes)?;
        let mut params = BTreeMap::new();
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for (key, view) in archive.tensors() {
            let t = tensor_from_view(&view, device)?;
            if let Some(name) = key.strip_prefix(PARAM_PREFIX) {
                params.insert(name.to_string(), t);
            } else if let Some(name) = key.strip_prefix(ADAM_M_PREFIX) {
                m.insert(name.to_string(), t);
            } else if let Some(name) = key.strip_prefix(ADAM_V_PREFIX) {
                v.insert(name.to_string(), t);
            } else {
                return Err(Error::Data(format!("unexpected checkpoint tensor `{key}`")));
            }
        }
        let adam = match meta.adam_step {
            Some(step) => Some(AdamState { step, m, v }),
            None => None,
        };
        Ok(Self { meta, params, adam })
    }

    pub fn load(path: impl AsRef<Path>, device: &Device) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes, device)
    }

    /// Rebuilds the network and copies every stored parameter into it.
    pub fn restore_network(&self, device: &Device) -> Result<Network> {
        let dtype = parse_dtype(&self.meta.dtype)?;
        let mut config = self.meta.network.clone();
        // Weights come from the checkpoint, not the original pretrained archive.
        config.backbone.pretrained_weights_path = None;
        let net = Network::build(&config, ParamStore::new(self.meta.seed, dtype, device.clone()))?;
        self.copy_into(net.store())?;
        Ok(net)
    }

    pub fn copy_into(&self, store: &ParamStore) -> Result<()> {
        let expected: Vec<&str> = store.names().collect();
        let stored: Vec<&str> = self.params.keys().map(String::as_str).collect();
        if expected != stored {
            let missing: Vec<_> = expected.iter().filter(|n| !self.params.contains_key(**n)).collect();
            let extra: Vec<_> = stored.iter().filter(|n| store.get(n).is_none()).collect();
            return Err(Error::Data(format!(
                "checkpoint does not match network layout (missing {missing:?}, unexpected {extra:?})"
            )));
        }
        for (name, t) in &self.params {
            store.set(name, t)?;
        }
        Ok(())
    }
}

pub fn dtype_name(dtype: DType) -> &'static str {
    match dtype {
        DType::F64 => "f64",
        DType::F32 => "f32",
        DType::F16 => "f16",
        DType::BF16 => "bf16",
        _ => "other",
    }
}

pub fn parse_dtype(s: &str) -> Result<DType> {
    match s {
        "f64" => Ok(DType::F64),
        "f32" => Ok(DType::F32),
        other => Err(Error::config(format!("unsupported dtype `{other}` (use f32 or f64)"))),
    }
}

struct HostTensor {
    dtype: Dtype,
    shape: Vec<usize>,
    bytes: Vec<u8>,
}

impl View for &HostTensor {
    fn dtype(&self) -> Dtype {
        self.dtype
    }

    fn shape(&self) -> &[usize] {
        &self.shape
    }

    fn data(&self) -> Cow<'_, [u8]> {
        Cow::Borrowed(&self.bytes)
    }

    fn data_len(&self) -> usize {
        self.bytes.len()
    }
}

fn host_tensor(t: &Tensor) -> Result<HostTensor> {
    let flat = t.flatten_all()?;
    let (dtype, bytes) = match t.dtype() {
        DType::F32 => (Dtype::F32, flat.to_vec1::<f32>()?.iter().flat_map(|v| v.to_le_bytes()).collect()),
        DType::F64 => (Dtype::F64, flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect()),
        other => return Err(Error::config(format!("cannot serialize dtype {other:?}"))),
    };
    Ok(HostTensor {
        dtype,
        shape: t.dims().to_vec(),
        bytes,
    })
}

fn serialize(tensors: &BTreeMap<String, Tensor>, meta: Option<HashMap<String, String>>) -> Result<Vec<u8>> {
    let host = tensors
        .iter()
        .map(|(k, t)| Ok((k.clone(), host_tensor(t)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(safetensors::serialize(host.iter().map(|(k, t)| (k.as_str(), t)), meta)?)
}

/// Writes a plain safetensors archive.
pub fn write_safetensors(
    tensors: &BTreeMap<String, Tensor>,
    meta: Option<HashMap<String, String>>,
    path: &Path,
) -> Result<()> {
    std::fs::write(path, serialize(tensors, meta)?)?;
    Ok(())
}

pub fn tensor_from_view(view: &TensorView<'_>, device: &Device) -> Result<Tensor> {
    let dtype = match view.dtype() {
        Dtype::F32 => DType::F32,
        Dtype::F64 => DType::F64,
        Dtype::F16 => DType::F16,
        Dtype::BF16 => DType::BF16,
        other => return Err(Error::Data(format!("unsupported tensor dtype {other:?}"))),
    };
    Ok(Tensor::from_raw_buffer(view.data(), dtype, view.shape(), device)?)
}
