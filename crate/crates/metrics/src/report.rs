//! Dataset evaluation and the serialized report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::measures::{self, THRESHOLD_COUNT};
use crate::smeasure::{self, ALPHA};
use crate::{MetricError, Result, SaliencyPair, BETA2};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: String,
    pub max_f: f64,
    pub s_measure: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub image_count: usize,
    /// Maximum over thresholds of the per-threshold mean F-measure.
    pub max_f: f64,
    /// Mean of per-image S-measures.
    pub s_measure: f64,
    /// Mean of per-image MAEs.
    pub mae: f64,
    /// Mean precision and recall across images at each threshold.
    pub pr_points: Vec<PrPoint>,
    pub images: Vec<ImageMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema_version: u32,
    pub beta2: f64,
    pub alpha: f64,
    /// Free-form identifier of the evaluated model (checkpoint path, run name).
    #[serde(default)]
    pub checkpoint: Option<String>,
    /// Configuration snapshot of the evaluated model, if known.
    #[serde(default)]
    pub config: Option<serde_json::Value>,
    pub datasets: BTreeMap<String, DatasetReport>,
}

impl MetricReport {
    pub fn new() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            beta2: BETA2,
            alpha: ALPHA,
            checkpoint: None,
            config: None,
            datasets: BTreeMap::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text)?;
        r.validate()?;
        Ok(r)
    }

    /// Checks the schema version, metric ranges and PR-curve length.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(MetricError::Schema(format!("schema_version {}", self.schema_version)));
        }
        let unit = |what: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(MetricError::Schema(format!("{what} = {v} outside [0, 1]")))
            }
        };
        for (name, d) in &self.datasets {
            unit(&format!("{name}.max_f"), d.max_f)?;
            unit(&format!("{name}.s_measure"), d.s_measure)?;
            unit(&format!("{name}.mae"), d.mae)?;
            if d.pr_points.len() != THRESHOLD_COUNT {
                return Err(MetricError::Schema(format!("{name}: {} PR points", d.pr_points.len())));
            }
            for p in &d.pr_points {
                unit("precision", p.precision)?;
                unit("recall", p.recall)?;
            }
            if d.images.len() != d.image_count {
                return Err(MetricError::Schema(format!("{name}: image_count mismatch")));
            }
            for m in &d.images {
                unit(&m.id, m.max_f)?;
                unit(&m.id, m.s_measure)?;
                unit(&m.id, m.mae)?;
            }
        }
        Ok(())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// One row per image: `dataset,id,max_f,s_measure,mae`.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["dataset", "id", "max_f", "s_measure", "mae"])?;
        for (name, d) in &self.datasets {
            for m in &d.images {
                w.write_record([
                    name.clone(),
                    m.id.clone(),
                    m.max_f.to_string(),
                    m.s_measure.to_string(),
                    m.mae.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

impl Default for MetricReport {
    fn default() -> Self {
        Self::new()
    }
}

/// Aggregates already-paired images.
pub fn summarize(pairs: &[(String, SaliencyPair)]) -> Result<DatasetReport> {
    if pairs.is_empty() {
        return Err(MetricError::Empty("no image pairs to evaluate".into()));
    }
    let n = pairs.len() as f64;
    let mut images = Vec::with_capacity(pairs.len());
    let mut p_sum = vec![0.0; THRESHOLD_COUNT];
    let mut r_sum = vec![0.0; THRESHOLD_COUNT];
    let mut f_sum = vec![0.0; THRESHOLD_COUNT];
    for (id, pair) in pairs {
        let curve = measures::pr_curve(pair);
        let mut best = 0.0f64;
        for (k, &(p, r)) in curve.iter().enumerate() {
            let f = measures::f_measure(p, r, BETA2);
            p_sum[k] += p;
            r_sum[k] += r;
            f_sum[k] += f;
            best = best.max(f);
        }
        images.push(ImageMetrics {
            id: id.clone(),
            max_f: best,
            s_measure: smeasure::s_measure(pair, ALPHA),
            mae: measures::mae(pair),
        });
    }
    Ok(DatasetReport {
        image_count: pairs.len(),
        max_f: f_sum.iter().map(|f| f / n).fold(0.0, f64::max),
        s_measure: images.iter().map(|m| m.s_measure).sum::<f64>() / n,
        mae: images.iter().map(|m| m.mae).sum::<f64>() / n,
        pr_points: (0..THRESHOLD_COUNT)
            .map(|k| PrPoint {
                threshold: measures::threshold(k),
                precision: p_sum[k] / n,
                recall: r_sum[k] / n,
            })
            .collect(),
        images,
    })
}

fn stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for item in std::fs::read_dir(dir)? {
        let path = item?.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| ["png", "jpg", "jpeg"].contains(&e.to_ascii_lowercase().as_str()));
        if let (true, Some(stem)) = (is_image, path.file_stem().and_then(|s| s.to_str())) {
            out.insert(stem.to_string(), path.clone());
        }
    }
    Ok(out)
}

fn read_gray(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|source| MetricError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(img.to_luma8())
}

/// Loads a prediction/mask pair from image files. The prediction is resized
/// (bilinear) to the mask's resolution; mask pixels `>= 128` are foreground.
pub fn load_pair(pred: &Path, gt: &Path) -> Result<SaliencyPair> {
    let g = read_gray(gt)?;
    let mut p = read_gray(pred)?;
    if p.dimensions() != g.dimensions() {
        p = image::imageops::resize(&p, g.width(), g.height(), FilterType::Triangle);
    }
    SaliencyPair::new(
        g.width() as usize,
        g.height() as usize,
        p.pixels().map(|v| f64::from(v[0]) / 255.0).collect(),
        g.pixels().map(|v| v[0] >= 128).collect(),
    )
}

/// Scores every prediction in `pred_dir` against the same-stem mask in
/// `gt_dir`. Unmatched stems are logged and skipped.
pub fn evaluate_dataset(pred_dir: &Path, gt_dir: &Path) -> Result<DatasetReport> {
    let preds = stems(pred_dir)?;
    let gts = stems(gt_dir)?;
    for stem in preds.keys().filter(|s| !gts.contains_key(*s)) {
        log::warn!("prediction `{stem}` has no ground truth, skipped");
    }
    for stem in gts.keys().filter(|s| !preds.contains_key(*s)) {
        log::warn!("ground truth `{stem}` has no prediction, skipped");
    }
    let pairs = preds
        .iter()
        .filter_map(|(stem, p)| gts.get(stem).map(|g| (stem, p, g)))
        .map(|(stem, p, g)| Ok((stem.clone(), load_pair(p, g)?)))
        .collect::<Result<Vec<_>>>()?;
    if pairs.is_empty() {
        return Err(MetricError::Empty(format!(
            "no common stems between {} and {}",
            pred_dir.display(),
            gt_dir.display()
        )));
    }
    summarize(&pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(pred: &[f64], gt: &[u8]) -> SaliencyPair {
        SaliencyPair::new(2, 2, pred.to_vec(), gt.iter().map(|&g| g == 1).collect()).unwrap()
    }

    #[test]
    fn single_image_aggregate_equals_image() {
        let p = pair(&[0.9, 0.2, 0.4, 0.7], &[1, 0, 0, 1]);
        let d = summarize(&[("a".into(), p.clone())]).unwrap();
        assert_eq!(d.max_f, d.images[0].max_f);
        assert_eq!(d.mae, d.images[0].mae);
        assert_eq!(d.s_measure, d.images[0].s_measure);
        assert_eq!(d.pr_points.len(), THRESHOLD_COUNT);
    }

    #[test]
    fn report_json_roundtrip_and_validation() {
        let p = pair(&[1.0, 0.0, 0.0, 1.0], &[1, 0, 0, 1]);
        let mut r = MetricReport::new();
        r.datasets.insert("toy".into(), summarize(&[("a".into(), p)]).unwrap());
        let back = MetricReport::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        let mut bad = r.clone();
        bad.datasets.get_mut("toy").unwrap().mae = 1.5;
        assert!(bad.validate().is_err());
        bad = r;
        bad.schema_version = 99;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn empty_input_is_error() {
        assert!(summarize(&[]).is_err());
    }
}
