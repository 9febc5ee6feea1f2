//! Threshold-based measures and MAE.

use crate::SaliencyPair;

/// Weight of precision in the F-measure.
pub const BETA2: f64 = 0.3;
/// Size of the binarization grid: thresholds `k / 255` for `k = 0..255`.
pub const THRESHOLD_COUNT: usize = 255;

pub fn threshold(k: usize) -> f64 {
    k as f64 / 255.0
}

pub fn thresholds() -> Vec<f64> {
    (0..THRESHOLD_COUNT).map(threshold).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    /// Precision is 1 when nothing is predicted; recall is 1 when the mask is empty.
    pub fn precision_recall(&self) -> (f64, f64) {
        let predicted = self.tp + self.fp;
        let actual = self.tp + self.fn_;
        let p = if predicted == 0 { 1.0 } else { self.tp as f64 / predicted as f64 };
        let r = if actual == 0 { 1.0 } else { self.tp as f64 / actual as f64 };
        (p, r)
    }
}

/// Counts after binarizing with `pred > t`.
pub fn confusion(pair: &SaliencyPair, t: f64) -> Confusion {
    let mut c = Confusion::default();
    for (&p, &g) in pair.pred().iter().zip(pair.gt()) {
        match (p > t, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    c
}

pub fn precision_recall(pair: &SaliencyPair, t: f64) -> (f64, f64) {
    confusion(pair, t).precision_recall()
}

/// `(1 + b2) P R / (b2 P + R)`, or 0 when the denominator vanishes.
pub fn f_measure(precision: f64, recall: f64, beta2: f64) -> f64 {
    let den = beta2 * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + beta2) * precision * recall / den
    }
}

/// Index of the highest grid threshold that `p` exceeds, or `None` if it exceeds none.
fn top_threshold(p: f64) -> Option<usize> {
    if !(p > threshold(0)) {
        return None;
    }
    let mut k = ((p * 255.0).ceil() as usize).saturating_sub(1).min(THRESHOLD_COUNT - 1);
    while k + 1 < THRESHOLD_COUNT && p > threshold(k + 1) {
        k += 1;
    }
    while k > 0 && !(p > threshold(k)) {
        k -= 1;
    }
    Some(k)
}

/// Confusion counts at every grid threshold in one pass over the pixels.
pub fn confusion_curve(pair: &SaliencyPair) -> Vec<Confusion> {
    let mut pos_hist = vec![0usize; THRESHOLD_COUNT];
    let mut neg_hist = vec![0usize; THRESHOLD_COUNT];
    for (&p, &g) in pair.pred().iter().zip(pair.gt()) {
        if let Some(k) = top_threshold(p) {
            if g {
                pos_hist[k] += 1;
            } else {
                neg_hist[k] += 1;
            }
        }
    }
    let fg = pair.foreground();
    let mut out = vec![Confusion::default(); THRESHOLD_COUNT];
    let (mut tp, mut fp) = (0, 0);
    for k in (0..THRESHOLD_COUNT).rev() {
        tp += pos_hist[k];
        fp += neg_hist[k];
        out[k] = Confusion { tp, fp, fn_: fg - tp };
    }
    out
}

/// `(precision, recall)` at every grid threshold.
pub fn pr_curve(pair: &SaliencyPair) -> Vec<(f64, f64)> {
    confusion_curve(pair).iter().map(Confusion::precision_recall).collect()
}

pub fn f_curve(pair: &SaliencyPair, beta2: f64) -> Vec<f64> {
    pr_curve(pair).into_iter().map(|(p, r)| f_measure(p, r, beta2)).collect()
}

/// Maximum F-measure over the threshold grid.
pub fn max_f_measure(pair: &SaliencyPair, beta2: f64) -> f64 {
    f_curve(pair, beta2).into_iter().fold(0.0, f64::max)
}

/// Mean absolute error.
pub fn mae(pair: &SaliencyPair) -> f64 {
    let sum: f64 = pair
        .pred()
        .iter()
        .zip(pair.gt())
        .map(|(&p, &g)| (p - if g { 1.0 } else { 0.0 }).abs())
        .sum();
    sum / pair.len() as f64
}
