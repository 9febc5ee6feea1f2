//! Depth-induced semantic enhancement.
//!
//! At high encoder levels the depth stream (the *guide*) steers the RGB stream
//! (the *target*) on two levels:
//!
//! - attention level: `s = sigmoid(conv3x3(channel_max(guide)))`, `rs = s * target`,
//!   then a squeeze-excitation gate on `rs` gives `att = ca(rs) * rs`;
//! - feature level: `add = sa(ca(guide))`, the guide refined by cascaded
//!   channel and spatial attention.
//!
//! The enhanced target is `att + add`.

use candle_core::Tensor;

use crate::attention::{AttentionMask, CascadedAttention, ChannelAttention, SpatialAttention};
use crate::conv::ConvBlockSpec;
use crate::ops;
use crate::params::{Init, Scope};
use crate::Result;

/// Kernel of the depth-derived spatial gate.
pub const SPATIAL_KERNELS: [usize; 1] = [3];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DseSpec {
    pub channels: usize,
    pub reduction: usize,
    /// Use `add = cascade(guide) + target` instead of `add = cascade(guide)`.
    pub alt_addition: bool,
}

impl DseSpec {
    pub fn new(channels: usize, reduction: usize) -> Self {
        Self {
            channels,
            reduction,
            alt_addition: false,
        }
    }

    pub fn num_params(&self) -> Result<usize> {
        let sa: usize = SPATIAL_KERNELS.iter().map(|&k| ConvBlockSpec::new(1, 1, k).num_params()).sum();
        let ca = ChannelAttention::num_params(self.channels, self.reduction)?;
        // spatial gate + channel gate + cascade (channel + spatial)
        Ok(sa + ca + ca + sa)
    }
}

#[derive(Debug, Clone)]
pub struct Dse {
    spatial: SpatialAttention,
    channel: ChannelAttention,
    enhance: CascadedAttention,
    alt_addition: bool,
}

impl Dse {
    pub fn new(scope: &mut Scope<'_>, spec: DseSpec) -> Result<Self> {
        let init = Init::FanInUniform;
        Ok(Self {
            spatial: SpatialAttention::new(&mut scope.push("spatial"), &SPATIAL_KERNELS, true, init)?,
            channel: ChannelAttention::new(&mut scope.push("channel"), spec.channels, spec.reduction, init)?,
            enhance: CascadedAttention::new(
                &mut scope.push("enhance"),
                spec.channels,
                spec.reduction,
                &SPATIAL_KERNELS,
                init,
            )?,
            alt_addition: spec.alt_addition,
        })
    }

    pub fn from_parts(spatial: SpatialAttention, channel: ChannelAttention, enhance: CascadedAttention) -> Self {
        Self {
            spatial,
            channel,
            enhance,
            alt_addition: false,
        }
    }

    /// Spatial weight map computed from the guide.
    pub fn spatial_weight(&self, guide: &Tensor) -> Result<AttentionMask> {
        self.spatial.mask(guide)
    }

    /// `rs = sigmoid(conv3x3(channel_max(guide))) * target`.
    pub fn depth_spatial_gate(&self, guide: &Tensor, target: &Tensor) -> Result<Tensor> {
        ops::ensure_same_shape("semantic enhancement inputs", guide, target)?;
        self.spatial_weight(guide)?.apply(target)
    }

    /// `att = sigmoid(FC(GAP(rs))) * rs`.
    pub fn attention_level_enhance(&self, rs: &Tensor) -> Result<Tensor> {
        self.channel.forward(rs)
    }

    /// `add = cascade(guide)`.
    pub fn feature_level_enhance(&self, guide: &Tensor) -> Result<Tensor> {
        self.enhance.forward(guide)
    }

    pub fn forward(&self, guide: &Tensor, target: &Tensor) -> Result<Tensor> {
        let att = self.attention_level_enhance(&self.depth_spatial_gate(guide, target)?)?;
        let mut add = self.feature_level_enhance(guide)?;
        if self.alt_addition {
            add = (add + target)?;
        }
        Ok((att + add)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{cascade_with, ChannelWeights};
    use crate::ops::to_f64_vec;
    use crate::params::ParamStore;
    use candle_core::{DType, Device};

    fn randn(shape: (usize, usize, usize, usize)) -> Tensor {
        Tensor::randn(0f64, 1., shape, &Device::Cpu).unwrap()
    }

    fn build(store: &mut ParamStore, spec: DseSpec) -> Dse {
        Dse::new(&mut store.root().push("dse"), spec).unwrap()
    }

    #[test]
    fn shapes_preserved_at_full_widths() {
        let mut store = ParamStore::cpu(0, DType::F32);
        let dse = build(&mut store, DseSpec::new(512, 16));
        assert_eq!(store.num_scalars(), DseSpec::new(512, 16).num_params().unwrap());
        let fr = Tensor::randn(0f32, 1., (1, 512, 32, 32), &Device::Cpu).unwrap();
        let fd = Tensor::randn(0f32, 1., (1, 512, 32, 32), &Device::Cpu).unwrap();
        assert_eq!(dse.forward(&fd, &fr).unwrap().dims(), &[1, 512, 32, 32]);
        let rs = dse.depth_spatial_gate(&fd, &fr).unwrap();
        assert_eq!(rs.dims(), &[1, 512, 32, 32]);
        assert_eq!(dse.spatial_weight(&fd).unwrap().tensor().dims(), &[1, 1, 32, 32]);
    }

    #[test]
    fn zero_spatial_conv_halves_target() {
        let mut store = ParamStore::cpu(0, DType::F64);
        let dse = build(&mut store, DseSpec::new(8, 4));
        store.zero_prefix("dse.spatial").unwrap();
        let (fr, fd) = (randn((1, 8, 4, 4)), randn((1, 8, 4, 4)));
        let rs = to_f64_vec(&dse.depth_spatial_gate(&fd, &fr).unwrap()).unwrap();
        for (a, b) in rs.iter().zip(to_f64_vec(&fr).unwrap()) {
            assert_eq!(*a, 0.5 * b);
        }
    }

    #[test]
    fn zero_fc_halves_attention_input() {
        let mut store = ParamStore::cpu(0, DType::F64);
        let dse = build(&mut store, DseSpec::new(8, 4));
        store.zero_prefix("dse.channel").unwrap();
        let rs = randn((2, 8, 3, 3));
        let att = to_f64_vec(&dse.attention_level_enhance(&rs).unwrap()).unwrap();
        for (a, b) in att.iter().zip(to_f64_vec(&rs).unwrap()) {
            assert_eq!(*a, 0.5 * b);
        }
    }

    #[test]
    fn attention_output_bounded_by_target() {
        let mut store = ParamStore::cpu(4, DType::F64);
        let dse = build(&mut store, DseSpec::new(4, 16));
        let (fr, fd) = (randn((1, 4, 5, 5)), randn((1, 4, 5, 5)));
        let att = dse.attention_level_enhance(&dse.depth_spatial_gate(&fd, &fr).unwrap()).unwrap();
        for (a, r) in to_f64_vec(&att).unwrap().iter().zip(to_f64_vec(&fr).unwrap()) {
            assert!(a.abs() <= r.abs());
        }
    }

    #[test]
    fn unit_gates_reduce_to_direct_addition() {
        // With every gate at 1 the module is plain addition of the two streams.
        let (fr, fd) = (randn((1, 3, 4, 4)), randn((1, 3, 4, 4)));
        let ones_mask = |f: &Tensor| {
            let (n, _, h, w) = f.dims4()?;
            AttentionMask::new(Tensor::ones((n, 1, h, w), DType::F64, f.device())?)
        };
        let ones_weights = |f: &Tensor| {
            let (n, c, _, _) = f.dims4()?;
            ChannelWeights::new(Tensor::ones((n, c, 1, 1), DType::F64, f.device())?)
        };
        let att = ones_weights(&fr).unwrap().apply(&ones_mask(&fd).unwrap().apply(&fr).unwrap()).unwrap();
        let add = cascade_with(&fd, ones_weights, ones_mask).unwrap();
        let out = to_f64_vec(&(att + add).unwrap()).unwrap();
        let expect = to_f64_vec(&(&fr + &fd).unwrap()).unwrap();
        assert_eq!(out, expect);
    }

    #[test]
    fn alt_addition_adds_target() {
        let mut a = ParamStore::cpu(9, DType::F64);
        let mut b = ParamStore::cpu(9, DType::F64);
        let plain = build(&mut a, DseSpec::new(4, 4));
        let alt = build(&mut b, DseSpec { alt_addition: true, ..DseSpec::new(4, 4) });
        let (fr, fd) = (randn((1, 4, 3, 3)), randn((1, 4, 3, 3)));
        let diff = (alt.forward(&fd, &fr).unwrap() - plain.forward(&fd, &fr).unwrap()).unwrap();
        for (x, y) in to_f64_vec(&diff).unwrap().iter().zip(to_f64_vec(&fr).unwrap()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut store = ParamStore::cpu(0, DType::F64);
        let dse = build(&mut store, DseSpec::new(4, 4));
        assert!(dse.forward(&randn((1, 4, 4, 4)), &randn((1, 4, 2, 2))).is_err());
    }
}
