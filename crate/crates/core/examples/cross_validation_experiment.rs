//! Runs the full cross-validated protocol from a config file and writes
//! curve.csv, confusion matrices, report.json and curve.png.
//!
//!     cargo run --release --example cross_validation_experiment -- [config] [out_dir]

use std::path::PathBuf;

use synthaug::cli::input_dataset;
use synthaug::config::RunConfig;
use synthaug::experiment::{run_experiment, write_outputs};

fn main() -> synthaug::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let config = args.next().map(PathBuf::from).unwrap_or_else(|| "crates/core/configs/desk.toml".into());
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| "out/experiment".into());
    let cfg = RunConfig::load(&config)?;
    let ds = input_dataset(&cfg)?;
    let report = run_experiment(&ds, cfg.mode, &cfg.experiment, cfg.seed, cfg.jobs, Some(&out))?;
    write_outputs(&report, &out)?;
    for p in report.classic.iter().chain(&report.gan) {
        println!(
            "{:<8} {:>6} samples/fold  accuracy {:.3}  folds {:?}",
            p.series.name(),
            p.train_size_per_fold,
            p.mean_accuracy,
            p.fold_accuracies.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>()
        );
    }
    println!("optimal classic group: {}", report.optimal_point().train_size_per_fold);
    Ok(())
}
