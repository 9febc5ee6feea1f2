use crate::{MetricError, Result};

/// A prediction in `[0, 1]` and a binary mask of the same `height x width`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyPair {
    width: usize,
    height: usize,
    pred: Vec<f64>,
    gt: Vec<bool>,
}

impl SaliencyPair {
    pub fn new(width: usize, height: usize, pred: Vec<f64>, gt: Vec<bool>) -> Result<Self> {
        let n = width * height;
        if n == 0 {
            return Err(MetricError::Shape(format!("empty {width}x{height} map")));
        }
        if pred.len() != n || gt.len() != n {
            return Err(MetricError::Shape(format!(
                "{width}x{height} needs {n} values, got pred {} and gt {}",
                pred.len(),
                gt.len()
            )));
        }
        if let Some(v) = pred.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(MetricError::Range(*v));
        }
        Ok(Self {
            width,
            height,
            pred,
            gt,
        })
    }

    /// Ground truth given as reals; values `>= 0.5` are foreground.
    pub fn from_real_gt(width: usize, height: usize, pred: Vec<f64>, gt: &[f64]) -> Result<Self> {
        Self::new(width, height, pred, gt.iter().map(|&g| g >= 0.5).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.pred.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pred.is_empty()
    }

    pub fn pred(&self) -> &[f64] {
        &self.pred
    }

    pub fn gt(&self) -> &[bool] {
        &self.gt
    }

    pub fn foreground(&self) -> usize {
        self.gt.iter().filter(|&&g| g).count()
    }
}
