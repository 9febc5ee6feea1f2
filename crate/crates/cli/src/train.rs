use std::path::PathBuf;

use anyhow::bail;
use cdinet::config::FlatConfig;
use cdinet::data::{self, RgbdSample};
use cdinet::train::{Trainer, TrainOptions};

use crate::datasets;

#[derive(clap::Args)]
pub struct TrainArgs {
    /// Flat TOML config; `CDINET_*` variables override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data_root: PathBuf,
    /// Comma-separated dataset names (default: every dataset under the root).
    #[arg(long, value_delimiter = ',')]
    pub datasets: Vec<String>,
    /// Datasets whose test split is scored after each epoch to keep `best.safetensors`.
    #[arg(long, value_delimiter = ',')]
    pub validation: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &TrainArgs) -> anyhow::Result<()> {
    let flat = FlatConfig::load(args.config.as_deref())?;
    let net_cfg = flat.network()?;
    let train_cfg = flat.train()?;

    let manifests = datasets::manifests(&args.data_root, &args.datasets)?;
    let (train, _) = data::make_split(&manifests)?;
    if train.is_empty() {
        bail!("training split is empty");
    }
    log::info!("{} training samples from {:?}", train.len(), manifests.iter().map(|m| &m.dataset).collect::<Vec<_>>());
    let samples = data::load_samples(&train, train_cfg.image_size)?;

    let mut validation: Vec<RgbdSample> = Vec::new();
    if !args.validation.is_empty() {
        for m in datasets::manifests(&args.data_root, &args.validation)? {
            let entries = datasets::select(&m, datasets::Split::Test)?;
            validation.extend(data::load_samples(&entries, train_cfg.image_size)?);
        }
    }

    std::fs::create_dir_all(&args.out)?;
    let mut trainer = Trainer::new(&net_cfg, &train_cfg)?;
    log::info!("{} parameters", trainer.net.count_parameters());
    let outcome = trainer.run(
        &samples,
        &TrainOptions {
            out_dir: Some(args.out.clone()),
            validation,
        },
    )?;
    println!(
        "trained {} iterations over {} epochs; final epoch loss {:.6}",
        outcome.checkpoint.meta.iteration,
        outcome.checkpoint.meta.epoch,
        outcome.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    println!("checkpoint: {}", args.out.join("final.safetensors").display());
    Ok(())
}
