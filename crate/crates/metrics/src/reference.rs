//! Naive loop implementations of every metric, for cross-checking.
//!
//! Inputs are 2-D row vectors; nothing here calls into the optimized code.

pub type Grid = Vec<Vec<f64>>;

fn dims(g: &Grid) -> (usize, usize) {
    (g.len(), g[0].len())
}

pub fn precision_recall(pred: &Grid, gt: &Grid, t: f64) -> (f64, f64) {
    let (h, w) = dims(pred);
    let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
    for i in 0..h {
        for j in 0..w {
            let on = pred[i][j] > t;
            let fg = gt[i][j] > 0.5;
            if on && fg {
                tp += 1.0;
            }
            if on && !fg {
                fp += 1.0;
            }
            if !on && fg {
                fneg += 1.0;
            }
        }
    }
    let p = if tp + fp == 0.0 { 1.0 } else { tp / (tp + fp) };
    let r = if tp + fneg == 0.0 { 1.0 } else { tp / (tp + fneg) };
    (p, r)
}

pub fn f_measure(p: f64, r: f64, beta2: f64) -> f64 {
    if beta2 * p + r == 0.0 {
        return 0.0;
    }
    (1.0 + beta2) * p * r / (beta2 * p + r)
}

pub fn max_f(pred: &Grid, gt: &Grid, beta2: f64) -> f64 {
    let mut best = 0.0;
    for k in 0..255 {
        let (p, r) = precision_recall(pred, gt, k as f64 / 255.0);
        let f = f_measure(p, r, beta2);
        if f > best {
            best = f;
        }
    }
    best
}

pub fn mae(pred: &Grid, gt: &Grid) -> f64 {
    let (h, w) = dims(pred);
    let mut s = 0.0;
    for i in 0..h {
        for j in 0..w {
            s += (pred[i][j] - gt[i][j]).abs();
        }
    }
    s / (h * w) as f64
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn std_sample(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn object(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let x = mean(v);
    2.0 * x / (x * x + 1.0 + std_sample(v) + f64::EPSILON)
}

fn ssim_block(p: &[f64], g: &[f64]) -> f64 {
    let n = p.len() as f64;
    let x = mean(p);
    let y = mean(g);
    let mut vx = 0.0;
    let mut vy = 0.0;
    let mut cxy = 0.0;
    for k in 0..p.len() {
        vx += (p[k] - x).powi(2);
        vy += (g[k] - y).powi(2);
        cxy += (p[k] - x) * (g[k] - y);
    }
    vx /= n - 1.0 + f64::EPSILON;
    vy /= n - 1.0 + f64::EPSILON;
    cxy /= n - 1.0 + f64::EPSILON;
    let a = 4.0 * x * y * cxy;
    let b = (x * x + y * y) * (vx + vy);
    if a != 0.0 {
        a / (b + f64::EPSILON)
    } else if b == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Structure measure, written out directly from the reference definition.
pub fn s_measure(pred: &Grid, gt: &Grid, alpha: f64) -> f64 {
    let (h, w) = dims(pred);
    let mut flat_p = Vec::new();
    let mut flat_g = Vec::new();
    for i in 0..h {
        for j in 0..w {
            flat_p.push(pred[i][j]);
            flat_g.push(if gt[i][j] > 0.5 { 1.0 } else { 0.0 });
        }
    }
    let y = mean(&flat_g);
    if y == 0.0 {
        return (1.0 - mean(&flat_p)).clamp(0.0, 1.0);
    }
    if y == 1.0 {
        return mean(&flat_p).clamp(0.0, 1.0);
    }

    // object term
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for k in 0..flat_p.len() {
        if flat_g[k] == 1.0 {
            fg.push(flat_p[k]);
        } else {
            bg.push(1.0 - flat_p[k]);
        }
    }
    let s_o = y * object(&fg) + (1.0 - y) * object(&bg);

    // region term: centroid in 1-based coordinates
    let mut sum_x = 0.0;
    let mut sum_y = 0.0;
    let mut count = 0.0;
    for i in 0..h {
        for j in 0..w {
            if gt[i][j] > 0.5 {
                sum_x += (j + 1) as f64;
                sum_y += (i + 1) as f64;
                count += 1.0;
            }
        }
    }
    let cx = (sum_x / count).round() as usize;
    let cy = (sum_y / count).round() as usize;
    let mut s_r = 0.0;
    let regions = [(0..cy, 0..cx), (0..cy, cx..w), (cy..h, 0..cx), (cy..h, cx..w)];
    for (rows, cols) in regions {
        let mut p = Vec::new();
        let mut g = Vec::new();
        for i in rows.clone() {
            for j in cols.clone() {
                p.push(pred[i][j]);
                g.push(if gt[i][j] > 0.5 { 1.0 } else { 0.0 });
            }
        }
        if p.is_empty() {
            continue;
        }
        s_r += (p.len() as f64 / (h * w) as f64) * ssim_block(&p, &g);
    }
    (alpha * s_o + (1.0 - alpha) * s_r).clamp(0.0, 1.0)
}
