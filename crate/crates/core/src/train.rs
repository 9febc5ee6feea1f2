//! Training loop: BCE supervision on the final prediction, Adam, step-decayed
//! learning rate, periodic checkpoints.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{parse_dtype, Checkpoint};
use crate::data::{self, Batch, RgbdSample};
use crate::network::{Network, NetworkConfig};
use crate::params::ParamStore;
use crate::{Error, Result};

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` before the logarithm.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub base_lr: f64,
    pub lr_decay_factor: f64,
    /// Epochs between learning-rate drops.
    pub lr_decay_period: usize,
    pub total_epochs: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Save a checkpoint after every this many epochs (0 disables).
    pub checkpoint_every: usize,
    /// Stop after this many optimizer steps even if epochs remain.
    pub max_iterations: Option<usize>,
    pub image_size: usize,
    pub augment: bool,
    /// `"f32"` or `"f64"`.
    pub dtype: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            base_lr: 1e-4,
            lr_decay_factor: 5.0,
            lr_decay_period: 40,
            total_epochs: 100,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            checkpoint_every: 10,
            max_iterations: None,
            image_size: 256,
            augment: true,
            dtype: "f32".into(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("lr_decay_period", self.lr_decay_period),
            ("total_epochs", self.total_epochs),
            ("image_size", self.image_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{name} must be positive")));
        }
        if !(self.base_lr > 0.0) {
            return Err(Error::config("base_lr must be positive"));
        }
        if !(self.lr_decay_factor > 1.0) {
            return Err(Error::config("lr_decay_factor must exceed 1"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::config("Adam betas must lie in [0, 1) and eps must be positive"));
        }
        if self.image_size % 16 != 0 {
            return Err(Error::config(format!("image_size {} is not divisible by 16", self.image_size)));
        }
        parse_dtype(&self.dtype)?;
        Ok(())
    }

    pub fn dtype(&self) -> Result<DType> {
        parse_dtype(&self.dtype)
    }
}

/// `base_lr / decay_factor ^ floor(epoch / decay_period)`.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> Result<f64> {
    if epoch >= cfg.total_epochs {
        return Err(Error::config(format!(
            "epoch {epoch} outside 0..{}",
            cfg.total_epochs
        )));
    }
    let drops = (epoch / cfg.lr_decay_period) as i32;
    Ok(cfg.base_lr / cfg.lr_decay_factor.powi(drops))
}

/// Mean binary cross-entropy between probabilities and a `{0, 1}` mask.
pub fn bce_loss(pred: &Tensor, gt: &Tensor) -> Result<Tensor> {
    if pred.dims() != gt.dims() {
        return Err(Error::shape("loss inputs", pred.dims(), gt.dims()));
    }
    let p = pred.clamp(BCE_EPS, 1.0 - BCE_EPS)?;
    let gt = gt.to_dtype(p.dtype())?;
    let pos = (&gt * p.log()?)?;
    let neg = ((1.0 - &gt)? * (1.0 - &p)?.log()?)?;
    Ok((pos + neg)?.neg()?.mean_all()?)
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new() -> Self {
        Self {
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub state: AdamState,
}

impl Adam {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            state: AdamState::new(),
        }
    }

    /// One bias-corrected Adam update of every parameter that received a gradient.
    pub fn step(&mut self, store: &ParamStore, grads: &GradStore, lr: f64) -> Result<()> {
        self.state.step += 1;
        let t = self.state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, var) in store.vars() {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            // Gradients can carry the backward graph; the moments must not.
            let g = &g.detach();
            let m = match self.state.m.get(name) {
                Some(m) => ((m * self.beta1)? + (g * (1.0 - self.beta1))?)?,
                None => (g * (1.0 - self.beta1))?,
            };
            let v = match self.state.v.get(name) {
                Some(v) => ((v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?,
                None => (g.sqr()? * (1.0 - self.beta2))?,
            };
            let update = ((&m / c1)? / ((&v / c2)?.sqrt()? + self.eps)?)?;
            var.set(&(var.as_tensor() - (update * lr)?)?)?;
            self.state.m.insert(name.to_string(), m.detach());
            self.state.v.insert(name.to_string(), v.detach());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Directory for checkpoints; nothing is written when `None`.
    pub out_dir: Option<PathBuf>,
    /// Optional held-out samples; enables `best.safetensors` by lowest MAE.
    pub validation: Vec<RgbdSample>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub iteration_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
    pub best_validation_mae: Option<f64>,
}

pub struct Trainer {
    pub net: Network,
    pub config: TrainConfig,
    pub adam: Adam,
    iteration: usize,
}

impl Trainer {
    pub fn new(net_config: &NetworkConfig, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let store = ParamStore::new(config.seed, config.dtype()?, Device::Cpu);
        let net = Network::build(net_config, store)?;
        Ok(Self::from_network(net, config))
    }

    pub fn from_network(net: Network, config: &TrainConfig) -> Self {
        Self {
            net,
            config: config.clone(),
            adam: Adam::new(config),
            iteration: 0,
        }
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Forward, loss, backward and one optimizer step. Returns the batch loss.
    pub fn step(&mut self, batch: &Batch, lr: f64) -> Result<f64> {
        // ReLU maps NaN to zero, so corrupt inputs would otherwise train silently.
        for (what, t) in [("rgb", &batch.rgb), ("depth", &batch.depth), ("mask", &batch.gt)] {
            if !t.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?.is_finite() {
                return Err(Error::Data(format!(
                    "non-finite {what} values in batch {:?} at iteration {}",
                    batch.ids, self.iteration
                )));
            }
        }
        let pred = self.net.forward(&batch.rgb, &batch.depth)?;
        let loss = bce_loss(pred.tensor(), &batch.gt)?;
        let mut value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        // The probability clamp inside the loss would hide a NaN prediction.
        let pred_sum = pred.tensor().sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if !pred_sum.is_finite() {
            value = f64::NAN;
        }
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                loss: value,
                iteration: self.iteration,
                ids: batch.ids.clone(),
            });
        }
        let grads = loss.backward()?;
        self.adam.step(self.net.store(), &grads, lr)?;
        self.iteration += 1;
        Ok(value)
    }

    pub fn checkpoint(&self, epoch: usize) -> Result<Checkpoint> {
        Checkpoint::capture(
            &self.net,
            Some(&self.config),
            Some(&self.adam.state),
            epoch,
            self.iteration,
            self.config.image_size,
        )
    }

    /// Runs the configured schedule over `samples`.
    ///
    /// Every epoch shuffles the set and drops the final incomplete batch.
    pub fn run(&mut self, samples: &[RgbdSample], options: &TrainOptions) -> Result<TrainOutcome> {
        let cfg = self.config.clone();
        if samples.len() < cfg.batch_size {
            return Err(Error::Data(format!(
                "{} training samples cannot fill one batch of {}",
                samples.len(),
                cfg.batch_size
            )));
        }
        if let Some(bad) = samples.iter().chain(&options.validation).find(|s| s.size != cfg.image_size) {
            return Err(Error::Data(format!("{} is {}px, expected {}", bad.id, bad.size, cfg.image_size)));
        }
        if let Some(dir) = &options.out_dir {
            std::fs::create_dir_all(dir)?;
        }
        let dtype = cfg.dtype()?;
        let device = self.net.store().device().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut iteration_losses = Vec::new();
        let mut epoch_losses = Vec::new();
        let mut best: Option<f64> = None;
        let mut epochs_done = 0;

        'epochs: for epoch in 0..cfg.total_epochs {
            let lr = lr_at_epoch(&cfg, epoch)?;
            order.shuffle(&mut rng);
            let mut sum = 0.0;
            let mut count = 0;
            for chunk in order.chunks_exact(cfg.batch_size) {
                if cfg.max_iterations.is_some_and(|m| self.iteration >= m) {
                    break;
                }
                let items: Vec<RgbdSample> = chunk
                    .iter()
                    .map(|&i| {
                        if cfg.augment {
                            data::augment(&samples[i], &mut rng)
                        } else {
                            samples[i].clone()
                        }
                    })
                    .collect();
                let refs: Vec<&RgbdSample> = items.iter().collect();
                let batch = data::make_batch(&refs, &device, dtype)?;
                let loss = self.step(&batch, lr)?;
                iteration_losses.push(loss);
                sum += loss;
                count += 1;
            }
            if count == 0 {
                break 'epochs;
            }
            epochs_done = epoch + 1;
            let mean = sum / count as f64;
            epoch_losses.push(mean);
            log::info!("epoch {epochs_done}/{} lr {lr:.3e} loss {mean:.6}", cfg.total_epochs);

            if let Some(dir) = &options.out_dir {
                if cfg.checkpoint_every > 0 && epochs_done % cfg.checkpoint_every == 0 {
                    self.checkpoint(epochs_done)?.save(dir.join(format!("epoch_{epochs_done:04}.safetensors")))?;
                }
                if !options.validation.is_empty() {
                    let v = validation_mae(&self.net, &options.validation, cfg.batch_size)?;
                    log::info!("epoch {epochs_done} validation MAE {v:.6}");
                    if best.is_none_or(|b| v < b) {
                        best = Some(v);
                        self.checkpoint(epochs_done)?.save(dir.join("best.safetensors"))?;
                    }
                }
            }
        }

        let checkpoint = self.checkpoint(epochs_done)?;
        if let Some(dir) = &options.out_dir {
            checkpoint.save(dir.join("final.safetensors"))?;
        }
        Ok(TrainOutcome {
            checkpoint,
            iteration_losses,
            epoch_losses,
            best_validation_mae: best,
        })
    }
}

/// Builds a network from `net_config` and trains it on `samples`.
pub fn train(
    net_config: &NetworkConfig,
    train_config: &TrainConfig,
    samples: &[RgbdSample],
    options: &TrainOptions,
) -> Result<TrainOutcome> {
    Trainer::new(net_config, train_config)?.run(samples, options)
}

/// Predicted maps for `samples`, row-major `size x size` each.
pub fn predict_samples(net: &Network, samples: &[RgbdSample], batch_size: usize) -> Result<Vec<Vec<f32>>> {
    let device = net.store().device().clone();
    let dtype = net.store().dtype();
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&RgbdSample> = chunk.iter().collect();
        let batch = data::make_batch(&refs, &device, dtype)?;
        out.extend(net.forward(&batch.rgb, &batch.depth)?.to_maps()?);
    }
    Ok(out)
}

/// Mean absolute error of the network's maps against the samples' masks.
pub fn validation_mae(net: &Network, samples: &[RgbdSample], batch_size: usize) -> Result<f64> {
    let maps = predict_samples(net, samples, batch_size)?;
    let per_image: Vec<f64> = maps
        .iter()
        .zip(samples)
        .map(|(p, s)| p.iter().zip(&s.gt).map(|(a, b)| f64::from((a - b).abs())).sum::<f64>() / p.len() as f64)
        .collect();
    Ok(per_image.iter().sum::<f64>() / per_image.len().max(1) as f64)
}

/// Loads a checkpoint and rebuilds its network on the CPU.
pub fn load_network(path: &Path) -> Result<(Network, Checkpoint)> {
    let ckpt = Checkpoint::load(path, &Device::Cpu)?;
    let net = ckpt.restore_network(&Device::Cpu)?;
    Ok((net, ckpt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar(t: Tensor) -> f64 {
        t.to_scalar::<f64>().unwrap()
    }

    #[test]
    fn bce_symmetric_and_perfect() {
        let half = Tensor::full(0.5f64, (1, 1, 3, 3), &Device::Cpu).unwrap();
        let gt = Tensor::new(&[[[[1f64, 0., 1.], [0., 0., 1.], [1., 1., 0.]]]], &Device::Cpu).unwrap();
        assert!((scalar(bce_loss(&half, &gt).unwrap()) - std::f64::consts::LN_2).abs() < 1e-12);
        let perfect = scalar(bce_loss(&gt, &gt).unwrap());
        assert!((0.0..1e-6).contains(&perfect));
        let p = Tensor::new(&[[[[0.8f64]]]], &Device::Cpu).unwrap();
        let g = Tensor::new(&[[[[1f64]]]], &Device::Cpu).unwrap();
        assert!((scalar(bce_loss(&p, &g).unwrap()) + 0.8f64.ln()).abs() < 1e-12);
        assert!(bce_loss(&p, &gt).is_err());
    }

    proptest! {
        #[test]
        fn bce_nonnegative(p in 0.0f64..=1.0, g in prop::bool::ANY) {
            let pt = Tensor::new(&[p], &Device::Cpu).unwrap();
            let gt = Tensor::new(&[if g { 1.0f64 } else { 0.0 }], &Device::Cpu).unwrap();
            prop_assert!(scalar(bce_loss(&pt, &gt).unwrap()) >= 0.0);
        }

        #[test]
        fn lr_schedule_non_increasing(e in 0usize..99) {
            let cfg = TrainConfig::default();
            prop_assert!(lr_at_epoch(&cfg, e + 1).unwrap() <= lr_at_epoch(&cfg, e).unwrap());
        }
    }

    #[test]
    fn lr_schedule_values() {
        let cfg = TrainConfig::default();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-18;
        assert!(close(lr_at_epoch(&cfg, 0).unwrap(), 1e-4));
        assert!(close(lr_at_epoch(&cfg, 39).unwrap(), 1e-4));
        assert!(close(lr_at_epoch(&cfg, 40).unwrap(), 2e-5));
        assert!(close(lr_at_epoch(&cfg, 80).unwrap(), 4e-6));
        assert!(close(lr_at_epoch(&cfg, 99).unwrap(), 4e-6));
        assert!(lr_at_epoch(&cfg, 100).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            lr_decay_factor: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            image_size: 40,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            dtype: "f16".into(),
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // With bias correction the first update is lr * g / (|g| + eps) ~= lr * sign(g).
        let mut store = ParamStore::cpu(0, DType::F64);
        store.root().push("p").weight_and_bias(&[2], crate::params::Init::Constant(1.0)).unwrap();
        let w = store.get("p.weight").unwrap().clone();
        let loss = (w.as_tensor() * Tensor::new(&[3f64, -0.5], &Device::Cpu).unwrap())
            .unwrap()
            .sum_all()
            .unwrap();
        let grads = loss.backward().unwrap();
        let mut adam = Adam::new(&TrainConfig::default());
        adam.step(&store, &grads, 0.1).unwrap();
        let v: Vec<f64> = w.as_tensor().to_vec1().unwrap();
        assert!((v[0] - 0.9).abs() < 1e-6 && (v[1] - 1.1).abs() < 1e-6, "{v:?}");
        assert_eq!(adam.state.step, 1);
        assert!(!adam.state.m.contains_key("p.bias"));
    }
}
