use std::path::PathBuf;
use std::time::Instant;

use candle_core::{Device, Tensor};
use cdinet::config::FlatConfig;
use cdinet::params::ParamStore;
use cdinet::Network;

#[derive(clap::Args)]
pub struct BenchArgs {
    /// Network config (default: full scale, discrepant mode).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    #[arg(long, default_value_t = 3)]
    pub runs: usize,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
}

pub fn run(args: &BenchArgs) -> anyhow::Result<()> {
    let flat = FlatConfig::load(args.config.as_deref())?;
    let cfg = flat.network()?;
    let dtype = flat.train()?.dtype()?;
    let net = Network::build(&cfg, ParamStore::new(0, dtype, Device::Cpu))?;
    let shape = (args.batch, 3, args.size, args.size);
    let rgb = Tensor::rand(0f32, 1., shape, &Device::Cpu)?.to_dtype(dtype)?;
    let depth = Tensor::rand(0f32, 1., shape, &Device::Cpu)?.to_dtype(dtype)?;

    // One warm-up pass so allocation does not count.
    net.forward(&rgb, &depth)?;
    let mut times = Vec::with_capacity(args.runs);
    for _ in 0..args.runs.max(1) {
        let t = Instant::now();
        net.forward(&rgb, &depth)?;
        times.push(t.elapsed().as_secs_f64());
    }
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    println!("parameters      {}", net.count_parameters());
    println!("input           {}x3x{}x{}", args.batch, args.size, args.size);
    println!("forward (mean)  {mean:.3} s over {} runs", times.len());
    println!("throughput      {:.2} images/s", args.batch as f64 / mean);
    Ok(())
}
