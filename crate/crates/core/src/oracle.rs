//! Straight-line reference implementations for testing.
//!
//! Everything here works on plain `Vec<f64>` with explicit loops and reads
//! module weights by their parameter names, so it shares no code path with
//! the tensor implementations it checks.

use std::collections::BTreeMap;

use candle_core::{DType, Tensor};

use crate::params::ParamStore;
use crate::{Error, Result};

/// Dense `N x C x H x W` array.
#[derive(Debug, Clone, PartialEq)]
pub struct Arr4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Arr4 {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (n, c, h, w) = t.dims4()?;
        let data = t.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
        Ok(Self { n, c, h, w, data })
    }

    pub fn idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(n, c, y, x)]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn zip(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!((self.n, self.c, self.h, self.w), (other.n, other.c, other.h, other.w));
        Self {
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            ..self.clone()
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Weights pulled out of a [`ParamStore`] by name.
#[derive(Debug, Clone)]
pub struct Weights {
    pub values: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
}

impl Weights {
    pub fn snapshot(store: &ParamStore) -> Result<Self> {
        let values = store
            .vars()
            .map(|(k, v)| {
                let t = v.as_tensor();
                Ok((k.to_string(), (t.dims().to_vec(), t.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?)))
            })
            .collect::<Result<_>>()?;
        Ok(Self { values })
    }

    fn get(&self, name: &str) -> &(Vec<usize>, Vec<f64>) {
        self.values.get(name).unwrap_or_else(|| panic!("oracle: no parameter `{name}`"))
    }

    /// `(weight, weight_dims, bias)` for a conv or FC layer under `prefix`.
    pub fn layer(&self, prefix: &str) -> (&[f64], &[usize], &[f64]) {
        let (dims, w) = self.get(&format!("{prefix}.weight"));
        let (_, b) = self.get(&format!("{prefix}.bias"));
        (w, dims, b)
    }
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// Zero-padded "same" convolution with a square odd kernel.
pub fn conv2d(x: &Arr4, w: &[f64], w_dims: &[usize], b: &[f64]) -> Arr4 {
    let (o, i, k) = (w_dims[0], w_dims[1], w_dims[2]);
    assert_eq!(i, x.c, "oracle conv: channel mismatch");
    let pad = (k / 2) as isize;
    let mut out = Arr4::zeros(x.n, o, x.h, x.w);
    for n in 0..x.n {
        for oc in 0..o {
            for y in 0..x.h {
                for xx in 0..x.w {
                    let mut acc = b[oc];
                    for ic in 0..i {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = y as isize + ky as isize - pad;
                                let sx = xx as isize + kx as isize - pad;
                                if sy < 0 || sx < 0 || sy >= x.h as isize || sx >= x.w as isize {
                                    continue;
                                }
                                acc += w[((oc * i + ic) * k + ky) * k + kx] * x.at(n, ic, sy as usize, sx as usize);
                            }
                        }
                    }
                    let idx = out.idx(n, oc, y, xx);
                    out.data[idx] = acc;
                }
            }
        }
    }
    out
}

pub fn conv_layer(x: &Arr4, weights: &Weights, prefix: &str, activation: bool) -> Arr4 {
    let (w, dims, b) = weights.layer(prefix);
    let y = conv2d(x, w, dims, b);
    if activation {
        y.map(relu)
    } else {
        y
    }
}

pub fn concat(parts: &[&Arr4]) -> Arr4 {
    let first = parts[0];
    let c: usize = parts.iter().map(|p| p.c).sum();
    let mut out = Arr4::zeros(first.n, c, first.h, first.w);
    for n in 0..first.n {
        let mut base = 0;
        for p in parts {
            for ch in 0..p.c {
                for y in 0..p.h {
                    for x in 0..p.w {
                        let idx = out.idx(n, base + ch, y, x);
                        out.data[idx] = p.at(n, ch, y, x);
                    }
                }
            }
            base += p.c;
        }
    }
    out
}

pub fn channel_max(x: &Arr4) -> Arr4 {
    let mut out = Arr4::zeros(x.n, 1, x.h, x.w);
    for n in 0..x.n {
        for y in 0..x.h {
            for xx in 0..x.w {
                let m = (0..x.c).map(|c| x.at(n, c, y, xx)).fold(f64::NEG_INFINITY, f64::max);
                let idx = out.idx(n, 0, y, xx);
                out.data[idx] = m;
            }
        }
    }
    out
}

/// Per-sample channel means.
pub fn global_avg_pool(x: &Arr4) -> Vec<Vec<f64>> {
    (0..x.n)
        .map(|n| {
            (0..x.c)
                .map(|c| {
                    let mut s = 0.0;
                    for y in 0..x.h {
                        for xx in 0..x.w {
                            s += x.at(n, c, y, xx);
                        }
                    }
                    s / (x.h * x.w) as f64
                })
                .collect()
        })
        .collect()
}

/// `y = W x + b` with `W` stored `(out, in)`.
pub fn fc(v: &[f64], w: &[f64], w_dims: &[usize], b: &[f64]) -> Vec<f64> {
    let (o, i) = (w_dims[0], w_dims[1]);
    (0..o).map(|r| b[r] + (0..i).map(|c| w[r * i + c] * v[c]).sum::<f64>()).collect()
}

/// Spatial mask: sigmoid of the conv stack applied to the channel max.
pub fn spatial_mask(x: &Arr4, weights: &Weights, prefix: &str, layers: usize, intermediate_relu: bool) -> Arr4 {
    let mut m = channel_max(x);
    for l in 1..=layers {
        m = conv_layer(&m, weights, &format!("{prefix}.conv{l}"), intermediate_relu && l < layers);
    }
    m.map(sigmoid)
}

/// Per-sample, per-channel gate `sigmoid(fc2(relu(fc1(gap(x)))))`.
pub fn channel_weights(x: &Arr4, weights: &Weights, prefix: &str) -> Vec<Vec<f64>> {
    let (w1, d1, b1) = weights.layer(&format!("{prefix}.fc1"));
    let (w2, d2, b2) = weights.layer(&format!("{prefix}.fc2"));
    global_avg_pool(x)
        .into_iter()
        .map(|g| {
            let hidden: Vec<f64> = fc(&g, w1, d1, b1).into_iter().map(relu).collect();
            fc(&hidden, w2, d2, b2).into_iter().map(sigmoid).collect()
        })
        .collect()
}

pub fn apply_mask(mask: &Arr4, x: &Arr4) -> Arr4 {
    let mut out = x.clone();
    for n in 0..x.n {
        for c in 0..x.c {
            for y in 0..x.h {
                for xx in 0..x.w {
                    let idx = out.idx(n, c, y, xx);
                    out.data[idx] *= mask.at(n, 0, y, xx);
                }
            }
        }
    }
    out
}

pub fn apply_channel_weights(cw: &[Vec<f64>], x: &Arr4) -> Arr4 {
    let mut out = x.clone();
    for n in 0..x.n {
        for c in 0..x.c {
            for y in 0..x.h {
                for xx in 0..x.w {
                    let idx = out.idx(n, c, y, xx);
                    out.data[idx] *= cw[n][c];
                }
            }
        }
    }
    out
}

/// Channel attention followed by spatial attention (one conv, kernel from weights).
pub fn cascade(x: &Arr4, weights: &Weights, prefix: &str) -> Arr4 {
    let ca = apply_channel_weights(&channel_weights(x, weights, &format!("{prefix}.channel")), x);
    let mask = spatial_mask(&ca, weights, &format!("{prefix}.spatial"), 1, false);
    apply_mask(&mask, &ca)
}

/// Detail enhancement of `target` guided by `guide`.
pub fn rde(guide: &Arr4, target: &Arr4, weights: &Weights, prefix: &str, mask_relu: bool) -> Arr4 {
    let fused = concat(&[guide, target]);
    let reduced = conv_layer(&fused, weights, &format!("{prefix}.fuse_reduce"), true);
    let pool = conv_layer(&reduced, weights, &format!("{prefix}.fuse_refine"), false);
    let mask = spatial_mask(target, weights, &format!("{prefix}.mask"), 2, mask_relu);
    apply_mask(&mask, &pool).zip(target, |a, b| a + b)
}

/// Semantic enhancement of `target` guided by `guide`.
pub fn dse(guide: &Arr4, target: &Arr4, weights: &Weights, prefix: &str) -> Arr4 {
    let s = spatial_mask(guide, weights, &format!("{prefix}.spatial"), 1, false);
    let rs = apply_mask(&s, target);
    let att = apply_channel_weights(&channel_weights(&rs, weights, &format!("{prefix}.channel")), &rs);
    let add = cascade(guide, weights, &format!("{prefix}.enhance"));
    att.zip(&add, |a, b| a + b)
}

/// Bilinear resize, half-pixel centers, no corner alignment, edge clamped.
pub fn bilinear(x: &Arr4, oh: usize, ow: usize) -> Arr4 {
    let coord = |dst: usize, inp: usize, out: usize| -> (usize, usize, f64) {
        let mut s = (dst as f64 + 0.5) * inp as f64 / out as f64 - 0.5;
        if s < 0.0 {
            s = 0.0;
        }
        let i0 = s.floor() as usize;
        let i0 = i0.min(inp - 1);
        let i1 = if i0 + 1 < inp { i0 + 1 } else { i0 };
        let f = if i1 == i0 { 0.0 } else { s - i0 as f64 };
        (i0, i1, f)
    };
    let mut out = Arr4::zeros(x.n, x.c, oh, ow);
    for n in 0..x.n {
        for c in 0..x.c {
            for y in 0..oh {
                let (y0, y1, fy) = coord(y, x.h, oh);
                for xx in 0..ow {
                    let (x0, x1, fx) = coord(xx, x.w, ow);
                    let v = (1.0 - fy) * ((1.0 - fx) * x.at(n, c, y0, x0) + fx * x.at(n, c, y0, x1))
                        + fy * ((1.0 - fx) * x.at(n, c, y1, x0) + fx * x.at(n, c, y1, x1));
                    let idx = out.idx(n, c, y, xx);
                    out.data[idx] = v;
                }
            }
        }
    }
    out
}

/// Semantic block at `level` (1-based) from all five skips.
pub fn semantic_block(skips: &[Arr4], level: usize, weights: &Weights, prefix: &str) -> Arr4 {
    let cur = &skips[level - 1];
    let ups: Vec<Arr4> = skips[level..].iter().map(|s| bilinear(s, cur.h, cur.w)).collect();
    let refs: Vec<&Arr4> = ups.iter().collect();
    let cat = concat(&refs);
    let reduced = conv_layer(&cat, weights, &format!("{prefix}.reduce"), true);
    conv_layer(&reduced, weights, &format!("{prefix}.refine"), false)
}

pub fn refine_skip(block: &Arr4, skip: &Arr4) -> Arr4 {
    block.zip(skip, |b, s| b * s + s)
}

/// Result of a finite-difference gradient comparison.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub checked: usize,
    /// `||analytic - numeric|| / max(||analytic|| + ||numeric||, 1e-12)` over all checked entries.
    pub relative_error: f64,
    pub worst_parameter: String,
}

/// Compares backprop gradients of `loss` with central differences over every
/// parameter whose name starts with `prefix`. The store must be `f64`.
pub fn gradient_check(
    store: &ParamStore,
    prefix: &str,
    h: f64,
    loss: impl Fn() -> Result<Tensor>,
) -> Result<GradCheck> {
    if store.dtype() != DType::F64 {
        return Err(Error::config("gradient checks need an f64 parameter store"));
    }
    let grads = loss()?.backward()?;
    let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
    let mut checked = 0;
    let mut worst = (0.0, String::new());
    let eval = || -> Result<f64> { Ok(loss()?.to_scalar::<f64>()?) };
    store.for_each_with_prefix(prefix, |name, var| {
        let base = var.as_tensor().copy()?;
        let dims = base.dims().to_vec();
        let values: Vec<f64> = base.flatten_all()?.to_vec1()?;
        let analytic: Vec<f64> = match grads.get(var.as_tensor()) {
            Some(g) => g.flatten_all()?.to_vec1()?,
            None => vec![0.0; values.len()],
        };
        let mut local = 0.0;
        for i in 0..values.len() {
            let mut v = values.clone();
            v[i] = values[i] + h;
            var.set(&Tensor::from_vec(v.clone(), dims.as_slice(), base.device())?)?;
            let plus = eval()?;
            v[i] = values[i] - h;
            var.set(&Tensor::from_vec(v, dims.as_slice(), base.device())?)?;
            let minus = eval()?;
            let numeric = (plus - minus) / (2.0 * h);
            let d = analytic[i] - numeric;
            diff2 += d * d;
            a2 += analytic[i] * analytic[i];
            n2 += numeric * numeric;
            local += d * d;
            checked += 1;
        }
        var.set(&base)?;
        if local >= worst.0 {
            worst = (local, name.to_string());
        }
        Ok(())
    })?;
    if checked == 0 {
        return Err(Error::config(format!("no parameters under `{prefix}`")));
    }
    Ok(GradCheck {
        checked,
        relative_error: diff2.sqrt() / (a2.sqrt() + n2.sqrt()).max(1e-12),
        worst_parameter: worst.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_convolution() {
        let x = Arr4 {
            n: 1,
            c: 1,
            h: 3,
            w: 3,
            data: vec![1.0; 9],
        };
        let y = conv2d(&x, &[1.0; 9], &[1, 1, 3, 3], &[0.0]);
        assert_eq!(y.data, vec![4., 6., 4., 6., 9., 6., 4., 6., 4.]);
    }

    #[test]
    fn bilinear_doubles_ramp() {
        let x = Arr4 {
            n: 1,
            c: 1,
            h: 1,
            w: 2,
            data: vec![0.0, 1.0],
        };
        let y = bilinear(&x, 1, 4);
        assert_eq!(y.data, vec![0.0, 0.25, 0.75, 1.0]);
    }
}
