//! Structure measure: `alpha * S_object + (1 - alpha) * S_region`.
//!
//! Follows the reference definition of Fan et al. (ICCV 2017), including its
//! MATLAB conventions: `eps` is machine epsilon, standard deviations use the
//! `N - 1` denominator, the mask centroid is rounded half away from zero with
//! 1-based coordinates, and a mask without foreground is split at the image
//! centre.

use crate::SaliencyPair;

pub const ALPHA: f64 = 0.5;
const EPS: f64 = f64::EPSILON;

/// S-measure with the given balance `alpha`, clamped to `[0, 1]`.
pub fn s_measure(pair: &SaliencyPair, alpha: f64) -> f64 {
    let n = pair.len() as f64;
    let y = pair.foreground() as f64 / n;
    let x = pair.pred().iter().sum::<f64>() / n;
    let q = if y == 0.0 {
        1.0 - x
    } else if y == 1.0 {
        x
    } else {
        alpha * s_object(pair) + (1.0 - alpha) * s_region(pair)
    };
    q.clamp(0.0, 1.0)
}

/// Foreground and background object similarity, weighted by foreground area.
pub fn s_object(pair: &SaliencyPair) -> f64 {
    let (pred, gt) = (pair.pred(), pair.gt());
    let fg: Vec<f64> = pred.iter().zip(gt).filter(|(_, &g)| g).map(|(&p, _)| p).collect();
    let bg: Vec<f64> = pred.iter().zip(gt).filter(|(_, &g)| !g).map(|(&p, _)| 1.0 - p).collect();
    let u = fg.len() as f64 / pred.len() as f64;
    u * object_score(&fg) + (1.0 - u) * object_score(&bg)
}

/// `2 x / (x^2 + 1 + sigma + eps)` over the values inside one region.
fn object_score(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sigma = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    2.0 * mean / (mean * mean + 1.0 + sigma + EPS)
}

/// 1-based centroid `(x, y)` of the mask, rounded half away from zero.
pub fn centroid(pair: &SaliencyPair) -> (usize, usize) {
    let (w, h) = (pair.width(), pair.height());
    let total = pair.foreground();
    if total == 0 {
        return ((w as f64 / 2.0).round() as usize, (h as f64 / 2.0).round() as usize);
    }
    let (mut sx, mut sy) = (0.0, 0.0);
    for (i, _) in pair.gt().iter().enumerate().filter(|(_, &g)| g) {
        sx += (i % w + 1) as f64;
        sy += (i / w + 1) as f64;
    }
    ((sx / total as f64).round() as usize, (sy / total as f64).round() as usize)
}

/// Area-weighted SSIM over the four quadrants around the mask centroid.
pub fn s_region(pair: &SaliencyPair) -> f64 {
    let (w, h) = (pair.width(), pair.height());
    let (cx, cy) = centroid(pair);
    let area = (w * h) as f64;
    // Quadrants as half-open pixel ranges: columns [0, cx) | [cx, w), rows [0, cy) | [cy, h).
    let quads = [(0, cx, 0, cy), (cx, w, 0, cy), (0, cx, cy, h), (cx, w, cy, h)];
    let mut q = 0.0;
    for (x0, x1, y0, y1) in quads {
        if x1 <= x0 || y1 <= y0 {
            continue;
        }
        let mut p = Vec::with_capacity((x1 - x0) * (y1 - y0));
        let mut g = Vec::with_capacity(p.capacity());
        for y in y0..y1 {
            for x in x0..x1 {
                p.push(pair.pred()[y * w + x]);
                g.push(if pair.gt()[y * w + x] { 1.0 } else { 0.0 });
            }
        }
        let weight = p.len() as f64 / area;
        q += weight * ssim(&p, &g);
    }
    q
}

/// Single-window SSIM variant of the structure measure.
fn ssim(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len() as f64;
    let x = pred.iter().sum::<f64>() / n;
    let y = gt.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (p, g) in pred.iter().zip(gt) {
        sxx += (p - x) * (p - x);
        syy += (g - y) * (g - y);
        sxy += (p - x) * (g - y);
    }
    let d = n - 1.0 + EPS;
    let (sxx, syy, sxy) = (sxx / d, syy / d, sxy / d);
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sxx + syy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}
