//! Spatial and channel attention, and their channel-then-spatial cascade.

use candle_core::Tensor;

use crate::conv::{ConvBlock, ConvBlockSpec};
use crate::ops::{self, Dims4};
use crate::params::{Init, Scope};
use crate::{Error, Result};

/// Default squeeze ratio of the channel-attention bottleneck.
pub const DEFAULT_REDUCTION: usize = 16;

/// A single-channel spatial gate `(N, 1, H, W)`.
#[derive(Debug, Clone)]
pub struct AttentionMask(Tensor);

impl AttentionMask {
    pub fn new(t: Tensor) -> Result<Self> {
        let d = Dims4::of(&t)?;
        if d.c != 1 {
            return Err(Error::ChannelMismatch {
                what: "attention mask",
                expected: 1,
                actual: d.c,
            });
        }
        Ok(Self(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    /// Multiplies the mask into every channel of `f`.
    pub fn apply(&self, f: &Tensor) -> Result<Tensor> {
        let (m, d) = (Dims4::of(&self.0)?, Dims4::of(f)?);
        if (m.n, m.h, m.w) != (d.n, d.h, d.w) {
            return Err(Error::shape("spatial gating", self.0.dims(), f.dims()));
        }
        Ok(f.broadcast_mul(&self.0)?)
    }
}

/// Per-channel gate `(N, C, 1, 1)`.
#[derive(Debug, Clone)]
pub struct ChannelWeights(Tensor);

impl ChannelWeights {
    pub fn new(t: Tensor) -> Result<Self> {
        let d = Dims4::of(&t)?;
        if (d.h, d.w) != (1, 1) {
            return Err(Error::shape("channel weights", t.dims(), &[d.n, d.c, 1, 1]));
        }
        Ok(Self(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn apply(&self, f: &Tensor) -> Result<Tensor> {
        let (w, d) = (Dims4::of(&self.0)?, Dims4::of(f)?);
        if (w.n, w.c) != (d.n, d.c) {
            return Err(Error::shape("channel gating", self.0.dims(), f.dims()));
        }
        Ok(f.broadcast_mul(&self.0)?)
    }
}

/// `sigmoid(conv_k(...conv_1(channel_max(f))))` with every conv mapping 1 -> 1
/// channel. Intermediate convs carry a ReLU unless disabled; the last one is
/// linear so the sigmoid sees the raw response.
#[derive(Debug, Clone)]
pub struct SpatialAttention {
    convs: Vec<ConvBlock>,
}

impl SpatialAttention {
    pub fn new(
        scope: &mut Scope<'_>,
        kernel_sizes: &[usize],
        intermediate_activation: bool,
        init: Init,
    ) -> Result<Self> {
        let specs = Self::specs(kernel_sizes, intermediate_activation)?;
        let convs = specs
            .into_iter()
            .enumerate()
            .map(|(i, spec)| ConvBlock::new(&mut scope.push(&format!("conv{}", i + 1)), spec, init))
            .collect::<Result<_>>()?;
        Ok(Self { convs })
    }

    pub fn from_convs(convs: Vec<ConvBlock>) -> Result<Self> {
        if convs.is_empty() {
            return Err(Error::config("spatial attention needs at least one convolution"));
        }
        for c in &convs {
            if c.spec().in_channels != 1 || c.spec().out_channels != 1 {
                return Err(Error::config("spatial attention convolutions map 1 -> 1 channel"));
            }
        }
        Ok(Self { convs })
    }

    pub fn specs(kernel_sizes: &[usize], intermediate_activation: bool) -> Result<Vec<ConvBlockSpec>> {
        if kernel_sizes.is_empty() {
            return Err(Error::config("spatial attention needs at least one kernel size"));
        }
        let last = kernel_sizes.len() - 1;
        Ok(kernel_sizes
            .iter()
            .enumerate()
            .map(|(i, &k)| ConvBlockSpec::new(1, 1, k).with_activation(i < last && intermediate_activation))
            .collect())
    }

    /// Response before the sigmoid.
    pub fn logits(&self, f: &Tensor) -> Result<Tensor> {
        let mut x = ops::channel_max(f)?;
        for conv in &self.convs {
            x = conv.forward(&x)?;
        }
        Ok(x)
    }

    pub fn mask(&self, f: &Tensor) -> Result<AttentionMask> {
        AttentionMask::new(ops::sigmoid(&self.logits(f)?)?)
    }

    pub fn forward(&self, f: &Tensor) -> Result<Tensor> {
        self.mask(f)?.apply(f)
    }
}

/// Squeeze-and-excitation style channel gate:
/// `sigmoid(FC2(relu(FC1(GAP(f)))))`, FC1 mapping `C -> C/r`, FC2 back to `C`.
#[derive(Debug, Clone)]
pub struct ChannelAttention {
    channels: usize,
    hidden: usize,
    fc1_w: Tensor,
    fc1_b: Tensor,
    fc2_w: Tensor,
    fc2_b: Tensor,
}

impl ChannelAttention {
    pub fn new(scope: &mut Scope<'_>, channels: usize, reduction: usize, init: Init) -> Result<Self> {
        let hidden = Self::hidden_width(channels, reduction)?;
        let (fc1_w, fc1_b) = scope.push("fc1").weight_and_bias(&[hidden, channels], init)?;
        let (fc2_w, fc2_b) = scope.push("fc2").weight_and_bias(&[channels, hidden], init)?;
        Ok(Self {
            channels,
            hidden,
            fc1_w,
            fc1_b,
            fc2_w,
            fc2_b,
        })
    }

    /// Explicit weights: `fc1_w (C/r, C)`, `fc1_b (C/r)`, `fc2_w (C, C/r)`, `fc2_b (C)`.
    pub fn from_tensors(fc1_w: Tensor, fc1_b: Tensor, fc2_w: Tensor, fc2_b: Tensor) -> Result<Self> {
        let (hidden, channels) = fc1_w.dims2()?;
        if fc2_w.dims() != [channels, hidden] {
            return Err(Error::shape("channel attention fc2", fc2_w.dims(), &[channels, hidden]));
        }
        if fc1_b.dims() != [hidden] || fc2_b.dims() != [channels] {
            return Err(Error::config("channel attention bias lengths do not match weights"));
        }
        Ok(Self {
            channels,
            hidden,
            fc1_w,
            fc1_b,
            fc2_w,
            fc2_b,
        })
    }

    /// Bottleneck width `C / r`. The ratio is clamped to `C` for narrow maps
    /// and must otherwise divide `C`.
    pub fn hidden_width(channels: usize, reduction: usize) -> Result<usize> {
        if reduction == 0 {
            return Err(Error::config("reduction ratio must be positive"));
        }
        let r = reduction.min(channels);
        if channels % r != 0 {
            return Err(Error::config(format!(
                "channel count {channels} is not divisible by reduction ratio {r}"
            )));
        }
        Ok(channels / r)
    }

    pub fn num_params(channels: usize, reduction: usize) -> Result<usize> {
        let h = Self::hidden_width(channels, reduction)?;
        Ok(2 * channels * h + h + channels)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn weights(&self, f: &Tensor) -> Result<ChannelWeights> {
        let d = Dims4::of(f)?;
        if d.c != self.channels {
            return Err(Error::ChannelMismatch {
                what: "channel attention input",
                expected: self.channels,
                actual: d.c,
            });
        }
        let pooled = ops::global_avg_pool(f)?.reshape((d.n, d.c))?;
        let h = pooled.matmul(&self.fc1_w.t()?)?.broadcast_add(&self.fc1_b)?.relu()?;
        let z = h.matmul(&self.fc2_w.t()?)?.broadcast_add(&self.fc2_b)?;
        ChannelWeights::new(ops::sigmoid(&z)?.reshape((d.n, d.c, 1, 1))?)
    }

    pub fn forward(&self, f: &Tensor) -> Result<Tensor> {
        self.weights(f)?.apply(f)
    }
}

/// Channel attention followed by spatial attention, each multiplied into the
/// running feature map.
#[derive(Debug, Clone)]
pub struct CascadedAttention {
    pub channel: ChannelAttention,
    pub spatial: SpatialAttention,
}

impl CascadedAttention {
    pub fn new(
        scope: &mut Scope<'_>,
        channels: usize,
        reduction: usize,
        spatial_kernels: &[usize],
        init: Init,
    ) -> Result<Self> {
        Ok(Self {
            channel: ChannelAttention::new(&mut scope.push("channel"), channels, reduction, init)?,
            spatial: SpatialAttention::new(&mut scope.push("spatial"), spatial_kernels, true, init)?,
        })
    }

    pub fn forward(&self, f: &Tensor) -> Result<Tensor> {
        cascade_with(f, |x| self.channel.weights(x), |x| self.spatial.mask(x))
    }
}

/// The cascade with pluggable gate generators; `forward` uses the learned ones.
pub fn cascade_with(
    f: &Tensor,
    channel_gate: impl FnOnce(&Tensor) -> Result<ChannelWeights>,
    spatial_gate: impl FnOnce(&Tensor) -> Result<AttentionMask>,
) -> Result<Tensor> {
    let x = channel_gate(f)?.apply(f)?;
    spatial_gate(&x)?.apply(&x)
}
