use std::path::PathBuf;

use anyhow::bail;
use cdinet::data;
use cdinet::train::{load_network, predict_samples};

use crate::datasets::{self, Split};

#[derive(clap::Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data_root: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub datasets: Vec<String>,
    /// Maps go to `<out>/<dataset>/<stem>.png`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: Split,
    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,
}

pub fn run(args: &InferArgs) -> anyhow::Result<()> {
    let (net, ckpt) = load_network(&args.checkpoint)?;
    let size = ckpt.meta.image_size;
    let mut written = 0;
    for m in datasets::manifests(&args.data_root, &args.datasets)? {
        let entries = datasets::select(&m, args.split)?;
        if entries.is_empty() {
            log::warn!("{}: no samples in the {:?} split", m.dataset, args.split);
            continue;
        }
        let samples = data::load_samples(&entries, size)?;
        let maps = predict_samples(&net, &samples, args.batch_size)?;
        let dir = args.out.join(&m.dataset);
        for (map, entry) in maps.iter().zip(&entries) {
            datasets::write_map(map, size, entry, &dir)?;
        }
        log::info!("{}: {} maps in {}", m.dataset, maps.len(), dir.display());
        written += maps.len();
    }
    if written == 0 {
        bail!("nothing to predict");
    }
    println!("wrote {written} saliency maps to {}", args.out.display());
    Ok(())
}
