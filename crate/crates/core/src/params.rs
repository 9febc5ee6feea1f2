//! Named parameter storage with deterministic initialization.
//!
//! Every trainable array lives in a [`ParamStore`] under a dotted module
//! path (`rgb.stage1.conv1.weight`, `decoder.head.bias`, ...). Modules keep
//! cheap clones of the underlying [`Var`]s, so in-place updates through the
//! store (optimizer steps, checkpoint loads) are visible to every module.
//!
//! Initial values are drawn from a ChaCha stream seeded by the store seed
//! mixed with a hash of the parameter name. Two networks built with the same
//! seed therefore agree on every parameter they have in common, whatever
//! other modules the variants add or remove.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result};

/// Initialization rule for a weight/bias pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and biases. This is the
    /// default rule of the common deep-learning frameworks for conv/linear layers.
    FanInUniform,
    /// `N(0, 2/fan_out)` weights with zero biases (He init, fan-out mode), used for
    /// backbone convolutions when no pretrained weights are supplied.
    KaimingNormal,
    /// All zeros. Only useful in tests.
    Zeros,
    Constant(f64),
}

pub struct ParamStore {
    device: Device,
    dtype: DType,
    seed: u64,
    vars: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType, device: Device) -> Self {
        Self {
            device,
            dtype,
            seed,
            vars: BTreeMap::new(),
        }
    }

    /// CPU store; the usual entry point.
    pub fn cpu(seed: u64, dtype: DType) -> Self {
        Self::new(seed, dtype, Device::Cpu)
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn root(&mut self) -> Scope<'_> {
        Scope {
            store: self,
            prefix: String::new(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn vars(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Overwrites a parameter in place. The source is cast to the store dtype.
    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self
            .vars
            .get(name)
            .ok_or_else(|| Error::config(format!("unknown parameter `{name}`")))?;
        if var.dims() != value.dims() {
            return Err(Error::shape("parameter assignment", var.dims(), value.dims()));
        }
        let value = value.to_dtype(self.dtype)?.to_device(&self.device)?;
        var.set(&value.contiguous()?)?;
        Ok(())
    }

    /// Applies `f` to every parameter whose name starts with `prefix`.
    pub fn for_each_with_prefix(
        &self,
        prefix: &str,
        mut f: impl FnMut(&str, &Var) -> Result<()>,
    ) -> Result<()> {
        for (name, var) in self.vars.range(prefix.to_string()..) {
            if !name.starts_with(prefix) {
                break;
            }
            f(name, var)?;
        }
        Ok(())
    }

    /// Zeroes every parameter under `prefix`.
    pub fn zero_prefix(&self, prefix: &str) -> Result<()> {
        self.for_each_with_prefix(prefix, |_, var| {
            var.set(&var.zeros_like()?)?;
            Ok(())
        })
    }

    fn create(&mut self, name: String, shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        if self.vars.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter `{name}`")));
        }
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let handle = var.as_tensor().clone();
        self.vars.insert(name, var);
        Ok(handle)
    }

    fn rng_for(&self, name: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(name.as_bytes()))
    }
}

/// A prefix view into a [`ParamStore`] used while building modules.
pub struct Scope<'a> {
    store: &'a mut ParamStore,
    prefix: String,
}

impl Scope<'_> {
    pub fn push(&mut self, name: &str) -> Scope<'_> {
        Scope {
            prefix: self.path(name),
            store: &mut *self.store,
        }
    }

    pub fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn device(&self) -> &Device {
        &self.store.device
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    /// Creates a weight of `shape` plus a bias of length `shape[0]`.
    ///
    /// `fan_in` is the product of all weight dims but the first; `fan_out` is
    /// `shape[0] * receptive field`.
    pub fn weight_and_bias(&mut self, shape: &[usize], init: Init) -> Result<(Tensor, Tensor)> {
        let out = shape[0];
        let fan_in: usize = shape[1..].iter().product();
        let receptive: usize = shape.get(2..).map_or(1, |r| r.iter().product());
        let fan_out = out * receptive.max(1);
        let w_name = self.path("weight");
        let b_name = self.path("bias");
        let count: usize = shape.iter().product();

        let mut rng = self.store.rng_for(&w_name);
        let weights: Vec<f64> = match init {
            Init::FanInUniform => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..count).map(|_| rng.random_range(-bound..bound)).collect()
            }
            Init::KaimingNormal => {
                let std = (2.0 / fan_out as f64).sqrt();
                (0..count)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        std * z
                    })
                    .collect()
            }
            Init::Zeros => vec![0.0; count],
            Init::Constant(c) => vec![c; count],
        };
        let mut rng = self.store.rng_for(&b_name);
        let biases: Vec<f64> = match init {
            Init::FanInUniform => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..out).map(|_| rng.random_range(-bound..bound)).collect()
            }
            Init::KaimingNormal | Init::Zeros => vec![0.0; out],
            Init::Constant(c) => vec![c; out],
        };
        let w = self.store.create(w_name, shape, weights)?;
        let b = self.store.create(b_name, &[out], biases)?;
        Ok((w, b))
    }

    /// Creates a 1-D parameter filled with `value` (normalization affine terms).
    pub fn constant(&mut self, name: &str, len: usize, value: f64) -> Result<Tensor> {
        let name = self.path(name);
        self.store.create(name, &[len], vec![value; len])
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}
