//! RGB-induced detail enhancement.
//!
//! At low encoder levels the RGB stream (the *guide*) supplements the depth
//! stream (the *target*). Both maps are fused into a feature pool,
//!
//! ```text
//! pool = conv3x3(conv1x1([guide, target]))
//! ```
//!
//! which is gated by a spatial mask computed from the target alone and added
//! back residually:
//!
//! ```text
//! out = sigmoid(conv7x7(conv7x7(channel_max(target)))) * pool + target
//! ```
//!
//! The roles are plain arguments, so the same module serves the reversed
//! (depth-to-RGB) direction used by the interaction-mode variants.

use candle_core::Tensor;

use crate::attention::{AttentionMask, SpatialAttention};
use crate::conv::{ConvBlock, ConvBlockSpec};
use crate::ops::{self, Dims4};
use crate::params::{Init, Scope};
use crate::Result;

pub const MASK_KERNELS: [usize; 2] = [7, 7];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RdeSpec {
    pub channels: usize,
    /// ReLU between the two 7x7 mask convolutions.
    pub mask_activation: bool,
}

impl RdeSpec {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            mask_activation: true,
        }
    }

    pub fn fuse_reduce(&self) -> ConvBlockSpec {
        ConvBlockSpec::new(2 * self.channels, self.channels, 1)
    }

    pub fn fuse_refine(&self) -> ConvBlockSpec {
        ConvBlockSpec::new(self.channels, self.channels, 3).linear()
    }

    pub fn num_params(&self) -> usize {
        let mask: usize = MASK_KERNELS.iter().map(|&k| ConvBlockSpec::new(1, 1, k).num_params()).sum();
        self.fuse_reduce().num_params() + self.fuse_refine().num_params() + mask
    }
}

#[derive(Debug, Clone)]
pub struct Rde {
    fuse_reduce: ConvBlock,
    fuse_refine: ConvBlock,
    mask: SpatialAttention,
}

impl Rde {
    pub fn new(scope: &mut Scope<'_>, spec: RdeSpec) -> Result<Self> {
        let init = Init::FanInUniform;
        Ok(Self {
            fuse_reduce: ConvBlock::new(&mut scope.push("fuse_reduce"), spec.fuse_reduce(), init)?,
            fuse_refine: ConvBlock::new(&mut scope.push("fuse_refine"), spec.fuse_refine(), init)?,
            mask: SpatialAttention::new(&mut scope.push("mask"), &MASK_KERNELS, spec.mask_activation, init)?,
        })
    }

    pub fn from_parts(fuse_reduce: ConvBlock, fuse_refine: ConvBlock, mask: SpatialAttention) -> Self {
        Self {
            fuse_reduce,
            fuse_refine,
            mask,
        }
    }

    /// Fused feature pool of `guide` and `target`; shape equals `target`'s.
    pub fn fuse_pool(&self, guide: &Tensor, target: &Tensor) -> Result<Tensor> {
        ops::ensure_same_shape("detail enhancement inputs", guide, target)?;
        let x = ops::concat_channels(&[guide, target])?;
        self.fuse_refine.forward(&self.fuse_reduce.forward(&x)?)
    }

    /// Spatial mask derived from the target stream.
    pub fn mask(&self, target: &Tensor) -> Result<AttentionMask> {
        self.mask.mask(target)
    }

    pub fn forward(&self, guide: &Tensor, target: &Tensor) -> Result<Tensor> {
        let pool = self.fuse_pool(guide, target)?;
        gate_residual(&self.mask(target)?, &pool, target)
    }
}

/// `mask * pool + target`.
pub fn gate_residual(mask: &AttentionMask, pool: &Tensor, target: &Tensor) -> Result<Tensor> {
    ops::ensure_same_shape("gated residual", pool, target)?;
    Dims4::of(target)?;
    Ok((mask.apply(pool)? + target)?)
}
