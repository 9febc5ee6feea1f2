//! Saliency-map evaluation: max F-measure, MAE, S-measure and PR curves.
//!
//! Predictions are real maps in `[0, 1]`, ground truth is a binary mask.
//! Thresholded measures binarize with `pred > k / 255` for `k = 0..255`.

pub mod measures;
mod pair;
pub mod plot;
#[cfg(any(test, feature = "oracle"))]
pub mod reference;
pub mod report;
pub mod smeasure;

use std::path::PathBuf;

pub use measures::{f_measure, mae, max_f_measure, precision_recall, BETA2};
pub use pair::SaliencyPair;
pub use report::{evaluate_dataset, DatasetReport, MetricReport};
pub use smeasure::{s_measure, ALPHA};

pub type Result<T> = std::result::Result<T, MetricError>;

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("prediction value {0} outside [0, 1]")]
    Range(f64),
    #[error("{0}")]
    Empty(String),
    #[error("report schema: {0}")]
    Schema(String),
    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
