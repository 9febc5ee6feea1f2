//! `cdinet` command-line front end: training, inference, evaluation, ablation
//! runs, benchmarking and synthetic fixtures.

mod ablate;
mod bench;
mod datasets;
mod eval;
mod infer;
mod train;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cdinet", version, about = "RGB-D salient object detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network on one or more datasets.
    Train(train::TrainArgs),
    /// Write saliency maps for a dataset split with a trained checkpoint.
    Infer(infer::InferArgs),
    /// Score a folder of saliency maps against ground-truth masks.
    Eval(eval::EvalArgs),
    /// Train and score several network variants on the same data.
    Ablate(ablate::AblateArgs),
    /// Time forward passes (informational; no pass/fail).
    Bench(bench::BenchArgs),
    /// Write a small synthetic dataset in the expected layout.
    MakeFixture(FixtureArgs),
}

#[derive(clap::Args)]
struct FixtureArgs {
    /// Data root; the dataset is written to `<out>/<dataset>`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "toy")]
    dataset: String,
    #[arg(long, default_value_t = 6)]
    count: usize,
    /// How many of the samples go to `train.txt`; the rest go to `test.txt`.
    #[arg(long, default_value_t = 4)]
    train: usize,
    #[arg(long, default_value_t = 64)]
    size: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train(a) => train::run(&a),
        Command::Infer(a) => infer::run(&a),
        Command::Eval(a) => eval::run(&a),
        Command::Ablate(a) => ablate::run(&a),
        Command::Bench(a) => bench::run(&a),
        Command::MakeFixture(a) => {
            let m = cdinet::data::write_synthetic_dataset(&a.out, &a.dataset, a.count, a.train, a.size, a.seed)?;
            println!("wrote {} samples to {}", m.entries.len(), a.out.join(&a.dataset).display());
            Ok(())
        }
    }
}
