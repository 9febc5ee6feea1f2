//! Same-padded 2-D convolution blocks.

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::ops::Dims4;
use crate::params::{Init, Scope};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlockSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub use_activation: bool,
    pub use_normalization: bool,
}

impl ConvBlockSpec {
    /// Convolution followed by ReLU, no normalization.
    pub fn new(in_channels: usize, out_channels: usize, kernel_size: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_size,
            use_activation: true,
            use_normalization: false,
        }
    }

    /// Same block without the trailing activation.
    pub fn linear(mut self) -> Self {
        self.use_activation = false;
        self
    }

    pub fn with_activation(mut self, on: bool) -> Self {
        self.use_activation = on;
        self
    }

    pub fn with_normalization(mut self, on: bool) -> Self {
        self.use_normalization = on;
        self
    }

    pub fn padding(&self) -> usize {
        (self.kernel_size - 1) / 2
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.kernel_size, 1 | 3 | 7) {
            return Err(Error::config(format!(
                "kernel size must be 1, 3 or 7, got {}",
                self.kernel_size
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::config("convolution channel counts must be positive"));
        }
        Ok(())
    }

    /// Trainable scalars: weights, biases, and the normalization affine pair.
    pub fn num_params(&self) -> usize {
        let k = self.kernel_size;
        let conv = self.out_channels * self.in_channels * k * k + self.out_channels;
        let norm = if self.use_normalization { 2 * self.out_channels } else { 0 };
        conv + norm
    }
}

#[derive(Debug, Clone)]
struct Affine {
    gamma: Tensor,
    beta: Tensor,
}

/// Convolution with bias, optional instance normalization, optional ReLU.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    spec: ConvBlockSpec,
    weight: Tensor,
    bias: Tensor,
    norm: Option<Affine>,
}

impl ConvBlock {
    pub fn new(scope: &mut Scope<'_>, spec: ConvBlockSpec, init: Init) -> Result<Self> {
        spec.validate()?;
        let k = spec.kernel_size;
        let (weight, bias) =
            scope.weight_and_bias(&[spec.out_channels, spec.in_channels, k, k], init)?;
        let norm = if spec.use_normalization {
            Some(Affine {
                gamma: scope.constant("norm_gamma", spec.out_channels, 1.0)?,
                beta: scope.constant("norm_beta", spec.out_channels, 0.0)?,
            })
        } else {
            None
        };
        Ok(Self {
            spec,
            weight,
            bias,
            norm,
        })
    }

    /// Builds a block around explicit weights `(out, in, k, k)` and bias `(out)`.
    pub fn from_tensors(spec: ConvBlockSpec, weight: Tensor, bias: Tensor) -> Result<Self> {
        spec.validate()?;
        if spec.use_normalization {
            return Err(Error::config("from_tensors does not support normalization"));
        }
        let k = spec.kernel_size;
        let expected = [spec.out_channels, spec.in_channels, k, k];
        if weight.dims() != expected {
            return Err(Error::shape("conv weight", weight.dims(), &expected));
        }
        if bias.dims() != [spec.out_channels] {
            return Err(Error::shape("conv bias", bias.dims(), &[spec.out_channels]));
        }
        Ok(Self {
            spec,
            weight,
            bias,
            norm: None,
        })
    }

    pub fn spec(&self) -> &ConvBlockSpec {
        &self.spec
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn forward(&self, f: &Tensor) -> Result<Tensor> {
        let d = Dims4::of(f)?;
        if d.c != self.spec.in_channels {
            return Err(Error::ChannelMismatch {
                what: "conv block input",
                expected: self.spec.in_channels,
                actual: d.c,
            });
        }
        let pad = self.spec.padding();
        let mut y = f
            .conv2d(&self.weight, pad, 1, 1, 1)?
            .broadcast_add(&self.bias.reshape((1, self.spec.out_channels, 1, 1))?)?;
        if let Some(norm) = &self.norm {
            y = instance_norm(&y, norm)?;
        }
        if self.spec.use_activation {
            y = y.relu()?;
        }
        Ok(y)
    }
}

fn instance_norm(y: &Tensor, affine: &Affine) -> Result<Tensor> {
    const EPS: f64 = 1e-5;
    let c = y.dim(1)?;
    let mean = y.mean_keepdim(D::Minus1)?.mean_keepdim(D::Minus2)?;
    let centered = y.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?.mean_keepdim(D::Minus2)?;
    let normed = centered.broadcast_div(&(var + EPS)?.sqrt()?)?;
    Ok(normed
        .broadcast_mul(&affine.gamma.reshape((1, c, 1, 1))?)?
        .broadcast_add(&affine.beta.reshape((1, c, 1, 1))?)?)
}
