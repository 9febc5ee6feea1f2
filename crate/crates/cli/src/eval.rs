use std::path::PathBuf;

use anyhow::Context;
use cdinet::Checkpoint;
use cdinet_metrics::plot::save_pr_plot;
use cdinet_metrics::{evaluate_dataset, MetricReport};

#[derive(clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub pr_plot: Option<PathBuf>,
    /// Dataset name in the report (default: the prediction folder's name).
    #[arg(long)]
    pub name: Option<String>,
    /// Checkpoint that produced the maps; its path and config go into the report.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

pub fn run(args: &EvalArgs) -> anyhow::Result<()> {
    let name = match &args.name {
        Some(n) => n.clone(),
        None => args
            .pred
            .canonicalize()?
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("dataset")
            .to_string(),
    };
    let mut report = MetricReport::new();
    if let Some(path) = &args.checkpoint {
        let ckpt = Checkpoint::load(path, &candle_core::Device::Cpu)
            .with_context(|| format!("reading {}", path.display()))?;
        report.checkpoint = Some(path.display().to_string());
        report.config = Some(serde_json::to_value(&ckpt.meta.network)?);
    }
    let d = evaluate_dataset(&args.pred, &args.gt)?;
    println!(
        "{name}: {} images  maxF {:.4}  S {:.4}  MAE {:.4}",
        d.image_count, d.max_f, d.s_measure, d.mae
    );
    report.datasets.insert(name, d);
    report.validate()?;
    report.save_json(&args.out)?;
    if let Some(p) = &args.csv {
        report.save_csv(p)?;
    }
    if let Some(p) = &args.pr_plot {
        save_pr_plot(&report, p)?;
    }
    Ok(())
}
