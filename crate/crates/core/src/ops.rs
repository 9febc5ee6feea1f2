//! Differentiable tensor helpers shared by every module.
//!
//! Feature maps are plain candle tensors in `N x C x H x W` layout.

use candle_core::{Tensor, D};

use crate::{Error, Result};

/// Dimensions of a feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims4 {
    pub fn of(t: &Tensor) -> Result<Self> {
        let (n, c, h, w) = t
            .dims4()
            .map_err(|_| Error::Precondition(format!("expected a 4-D feature map, got {:?}", t.dims())))?;
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::Precondition(format!("empty feature map {:?}", t.dims())));
        }
        Ok(Self { n, c, h, w })
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.h, self.w)
    }
}

pub fn ensure_same_shape(what: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(what, a.dims(), b.dims()));
    }
    Ok(())
}

pub fn ensure_same_spatial(what: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    let (da, db) = (Dims4::of(a)?, Dims4::of(b)?);
    if (da.n, da.h, da.w) != (db.n, db.h, db.w) {
        return Err(Error::shape(what, a.dims(), b.dims()));
    }
    Ok(())
}

pub fn sigmoid(t: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(t)?)
}

/// Maximum along the channel axis, keeping it: `(N,C,H,W) -> (N,1,H,W)`.
pub fn channel_max(t: &Tensor) -> Result<Tensor> {
    Dims4::of(t)?;
    Ok(t.max_keepdim(1)?)
}

/// 2x2 max pooling with stride 2 on an even-sized map.
///
/// Built from a reshape and two reductions instead of `Tensor::max_pool2d`,
/// whose backward pass in candle 0.11 scales the gradient by the fraction of
/// tied window entries rather than dividing by their count.
pub fn max_pool2x2(t: &Tensor) -> Result<Tensor> {
    let d = Dims4::of(t)?;
    if d.h % 2 != 0 || d.w % 2 != 0 {
        return Err(Error::Precondition(format!("cannot halve a {}x{} map", d.h, d.w)));
    }
    Ok(t
        .contiguous()?
        .reshape((d.n, d.c, d.h / 2, 2, d.w / 2, 2))?
        .max(5)?
        .max(3)?)
}

/// Global average pooling: `(N,C,H,W) -> (N,C,1,1)`.
pub fn global_avg_pool(t: &Tensor) -> Result<Tensor> {
    Dims4::of(t)?;
    Ok(t.mean_keepdim(D::Minus1)?.mean_keepdim(D::Minus2)?)
}

pub fn concat_channels<T: AsRef<Tensor>>(parts: &[T]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::Precondition("nothing to concatenate".into()));
    }
    let first = parts[0].as_ref();
    for p in &parts[1..] {
        ensure_same_spatial("channel concatenation", first, p.as_ref())?;
    }
    Ok(Tensor::cat(parts, 1)?)
}

/// One output sample of 1-D linear interpolation: `(1-frac)*x[lo] + frac*x[hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

/// Linear-interpolation taps for resizing `in_len` samples to `out_len` with
/// half-pixel centers and no corner alignment:
/// `src = max((dst + 0.5) * in_len / out_len - 0.5, 0)`.
pub fn linear_taps(in_len: usize, out_len: usize) -> Vec<Tap> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|dst| {
            let src = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            let frac = if lo == hi { 0.0 } else { src - lo as f64 };
            Tap { lo, hi, frac }
        })
        .collect()
}

fn interp_matrix(in_len: usize, out_len: usize, like: &Tensor) -> Result<Tensor> {
    let mut m = vec![0f64; out_len * in_len];
    for (row, tap) in linear_taps(in_len, out_len).into_iter().enumerate() {
        m[row * in_len + tap.lo] += 1.0 - tap.frac;
        m[row * in_len + tap.hi] += tap.frac;
    }
    Ok(Tensor::from_vec(m, (out_len, in_len), like.device())?.to_dtype(like.dtype())?)
}

/// Bilinear resize of a feature map to `(out_h, out_w)`, expressed as two
/// interpolation-matrix products so it stays differentiable.
pub fn resize_bilinear(t: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let d = Dims4::of(t)?;
    if (d.h, d.w) == (out_h, out_w) {
        return Ok(t.clone());
    }
    let rows = interp_matrix(d.h, out_h, t)?; // (out_h, h)
    let cols = interp_matrix(d.w, out_w, t)?.t()?; // (w, out_w)
    let t = t.contiguous()?.broadcast_matmul(&cols)?; // (n, c, h, out_w)
    Ok(rows.broadcast_matmul(&t)?)
}

/// Resizes `t` to the spatial size of `reference`.
pub fn resize_like(t: &Tensor, reference: &Tensor) -> Result<Tensor> {
    let d = Dims4::of(reference)?;
    resize_bilinear(t, d.h, d.w)
}

/// Largest absolute entry.
pub fn max_abs(t: &Tensor) -> Result<f64> {
    Ok(t.abs()?.flatten_all()?.max(0)?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

pub fn all_finite(t: &Tensor) -> Result<bool> {
    let v: Vec<f64> = t.flatten_all()?.to_dtype(candle_core::DType::F64)?.to_vec1()?;
    Ok(v.iter().all(|x| x.is_finite()))
}

pub fn to_f64_vec(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.flatten_all()?.to_dtype(candle_core::DType::F64)?.to_vec1()?)
}
