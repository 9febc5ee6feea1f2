//! Trains each requested variant from one base config and scores it on the
//! test split at training resolution.

use std::path::PathBuf;

use anyhow::bail;
use cdinet::config::FlatConfig;
use cdinet::data;
use cdinet::train::{predict_samples, Trainer, TrainOptions};
use cdinet::Variant;
use cdinet_metrics::report::summarize;
use cdinet_metrics::{MetricReport, SaliencyPair};

use crate::datasets::{self, Split};

#[derive(clap::Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data_root: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub datasets: Vec<String>,
    /// Comma-separated variant names (default: all).
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<Variant>,
    /// Per-variant checkpoints go to `<out>/<variant>/`; the combined report
    /// is `<out>/ablation.json`, keyed `<variant>/<dataset>`.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &AblateArgs) -> anyhow::Result<()> {
    let flat = FlatConfig::load(args.config.as_deref())?;
    let base = flat.network()?;
    let train_cfg = flat.train()?;
    let size = train_cfg.image_size;
    let variants = if args.variants.is_empty() {
        Variant::ALL.to_vec()
    } else {
        args.variants.clone()
    };

    let manifests = datasets::manifests(&args.data_root, &args.datasets)?;
    let (train, _) = data::make_split(&manifests)?;
    let train = data::load_samples(&train, size)?;
    let mut test = Vec::new();
    for m in &manifests {
        let entries = datasets::select(m, Split::Test)?;
        if !entries.is_empty() {
            test.push((m.dataset.clone(), data::load_samples(&entries, size)?));
        }
    }
    if test.is_empty() {
        bail!("no test samples to score the variants on");
    }

    let mut report = MetricReport::new();
    println!("{:<16} {:>12} {:>8} {:>8} {:>8}", "variant", "parameters", "maxF", "S", "MAE");
    for v in variants {
        let cfg = v.apply(&base);
        let mut trainer = Trainer::new(&cfg, &train_cfg)?;
        let params = trainer.net.count_parameters();
        trainer.run(
            &train,
            &TrainOptions {
                out_dir: Some(args.out.join(v.name())),
                validation: Vec::new(),
            },
        )?;
        for (dataset, samples) in &test {
            let maps = predict_samples(&trainer.net, samples, train_cfg.batch_size)?;
            let pairs = maps
                .into_iter()
                .zip(samples)
                .map(|(m, s)| {
                    let pred = m.into_iter().map(f64::from).collect();
                    let gt: Vec<f64> = s.gt.iter().map(|&g| f64::from(g)).collect();
                    Ok((s.id.clone(), SaliencyPair::from_real_gt(size, size, pred, &gt)?))
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            let d = summarize(&pairs)?;
            println!("{:<16} {:>12} {:>8.4} {:>8.4} {:>8.4}  ({dataset})", v.name(), params, d.max_f, d.s_measure, d.mae);
            report.datasets.insert(format!("{}/{dataset}", v.name()), d);
        }
    }
    report.validate()?;
    let path = args.out.join("ablation.json");
    report.save_json(&path)?;
    println!("report: {}", path.display());
    Ok(())
}
