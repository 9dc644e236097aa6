//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 invalid input or config, 2 runtime failure
//! (training, I/O, leakage), 64 usage error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::classic_aug::materialize;
use crate::classifier::{evaluate, train_classifier, write_history};
use crate::config::RunConfig;
use crate::data_model::{load_dataset, write_dataset, Dataset, LesionClass};
use crate::dcgan::{synthesize, tile_grid, train_gan, Generator, GeneratorSidecar};
use crate::error::{Error, Result};
use crate::experiment::output::write_json;
use crate::experiment::{export_rater_set, make_folds, run_experiment, write_outputs, ConfusionMatrix, ExperimentReport, Mode};
use crate::phantom::generate_phantom_dataset;
use crate::seed::derive_seed;

pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;
pub const EXIT_USAGE: u8 = 64;

#[derive(Parser, Debug)]
#[command(name = "synthaug", version, about = "Lesion ROI augmentation and cross-validated experiments")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// TOML or JSON run config; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default: out/<subcommand>).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for fold×group runs.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum ModeArg {
    Aug,
    AugGan,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the procedural phantom dataset (PNGs + manifest).
    Phantom,
    /// Materialize classic augmentations of a dataset.
    Augment {
        /// Augment only the training split of this fold.
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Train one class generator.
    GanTrain {
        #[arg(long)]
        class: LesionClass,
        /// Train on the training split of this fold only.
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Draw samples from a trained generator checkpoint.
    GanSample {
        /// Generator `.ck` file with its `.json` sidecar alongside.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train a classifier; with `--fold`, evaluate on that held-out fold.
    ClfTrain {
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Run the cross-validated augmentation experiment.
    Experiment,
    /// Print metrics for confusion-matrix or experiment-report JSON files.
    Report { files: Vec<PathBuf> },
    /// Export a blinded real + synthetic image set with an answer key.
    RaterExport {
        /// Generator checkpoints, one per class.
        #[arg(long, required = true, num_args = 1..)]
        generators: Vec<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Phantom => "phantom",
            Command::Augment { .. } => "augment",
            Command::GanTrain { .. } => "gan-train",
            Command::GanSample { .. } => "gan-sample",
            Command::ClfTrain { .. } => "clf-train",
            Command::Experiment => "experiment",
            Command::Report { .. } => "report",
            Command::RaterExport { .. } => "rater-export",
        }
    }
}

#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    seed: u64,
    config_hash: String,
    version: &'a str,
}

fn init_logging() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| {
            writeln!(
                buf,
                "ts={} level={} target={} {}",
                buf.timestamp_millis(),
                record.level().as_str().to_lowercase(),
                record.target(),
                record.args()
            )
        })
        .try_init();
}

fn resolve_config(g: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(j) = g.jobs {
        cfg.jobs = j;
    }
    if let Some(m) = g.mode {
        cfg.mode = match m {
            ModeArg::Aug => Mode::Aug,
            ModeArg::AugGan => Mode::AugGan,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_snapshot(cfg: &RunConfig, command: &str, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join("config.toml");
    std::fs::write(&path, cfg.to_toml()?).map_err(|e| Error::io(&path, e))?;
    write_json(
        &RunRecord {
            command,
            seed: cfg.seed,
            config_hash: cfg.hash(),
            version: env!("CARGO_PKG_VERSION"),
        },
        &out.join("run.json"),
    )
}

/// The configured manifest dataset, or the phantom dataset when none is set.
pub fn input_dataset(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.manifest {
        Some(m) => {
            let root = cfg
                .image_root
                .clone()
                .or_else(|| m.parent().map(Path::to_path_buf))
                .unwrap_or_default();
            load_dataset(m, &root)
        }
        None => generate_phantom_dataset(&cfg.phantom),
    }
}

fn fold_train(cfg: &RunConfig, ds: &Dataset, fold: usize) -> Result<(Dataset, Dataset)> {
    make_folds(ds, cfg.experiment.folds, derive_seed(cfg.seed, &["folds"]))?.split(ds, fold)
}

fn load_generator(path: &Path) -> Result<(Generator, GeneratorSidecar)> {
    let side = path.with_extension("json");
    let text = std::fs::read(&side).map_err(|e| Error::io(&side, e))?;
    Ok((Generator::load(path)?, serde_json::from_slice(&text)?))
}

fn print_metrics(label: &str, cm: &ConfusionMatrix) -> Result<()> {
    let s = cm.summary()?;
    println!("{label}");
    println!("  class        sensitivity  specificity");
    for c in LesionClass::ALL {
        let i = c.index();
        println!("  {:<12} {:>10.1}%  {:>10.1}%", c.name(), 100.0 * s.sensitivity[i], 100.0 * s.specificity[i]);
    }
    println!(
        "  weighted     {:>10.1}%  {:>10.1}%   accuracy {:.1}%",
        100.0 * s.weighted_sensitivity,
        100.0 * s.weighted_specificity,
        100.0 * s.accuracy
    );
    Ok(())
}

fn report(files: &[PathBuf], out: &Path) -> Result<()> {
    if files.is_empty() {
        return Err(Error::validation("report needs at least one JSON file"));
    }
    let mut summaries = std::collections::BTreeMap::new();
    for f in files {
        let bytes = std::fs::read(f).map_err(|e| Error::io(f, e))?;
        let label = f.display().to_string();
        if let Ok(r) = serde_json::from_slice::<ExperimentReport>(&bytes) {
            println!("{label}: {} classic points, {} synthetic points", r.classic.len(), r.gan.len());
            for p in r.classic.iter().chain(&r.gan) {
                println!(
                    "  {:<8} size={:<7} mean_accuracy={:.4}",
                    p.series.name(),
                    p.train_size_per_fold,
                    p.mean_accuracy
                );
            }
            let best = r.optimal_point();
            print_metrics(&format!("  optimal classic group ({})", best.train_size_per_fold), &best.confusion)?;
            summaries.insert(label, best.confusion.summary()?);
        } else {
            let cm: ConfusionMatrix = serde_json::from_slice(&bytes)?;
            print_metrics(&label, &cm)?;
            summaries.insert(label, cm.summary()?);
        }
    }
    write_json(&summaries, &out.join("metrics.json"))
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(&cli.global)?;
    let name = cli.command.name();
    let out = cli.global.out.clone().unwrap_or_else(|| PathBuf::from("out").join(name));
    write_snapshot(&cfg, name, &out)?;
    log::info!("event=start command={name} seed={} config_hash={} out={}", cfg.seed, cfg.hash(), out.display());
    let margin = cfg.experiment.margin_frac;
    match &cli.command {
        Command::Phantom => {
            let mut pc = cfg.phantom.clone();
            if let Some(s) = cli.global.seed {
                pc.seed = s;
            }
            let ds = generate_phantom_dataset(&pc)?;
            write_dataset(&ds, &out.join("dataset"))?;
            log::info!("event=phantom items={} counts={:?}", ds.len(), ds.class_counts());
        }
        Command::Augment { fold } => {
            let mut ds = input_dataset(&cfg)?;
            if let Some(f) = fold {
                ds = fold_train(&cfg, &ds, *f)?.0;
            }
            let rows = materialize(&ds, &cfg.experiment.plan, derive_seed(cfg.seed, &["augment"]), margin, &out)?;
            log::info!("event=augment lesions={} rows={rows}", ds.len());
        }
        Command::GanTrain { class, fold } => {
            let mut ds = input_dataset(&cfg)?;
            if let Some(f) = fold {
                ds = fold_train(&cfg, &ds, *f)?.0;
            }
            let pool = ds.of_class(*class);
            let gcfg = crate::dcgan::GanTrainConfig {
                seed: derive_seed(cfg.seed, &["gan", class.name()]),
                ..cfg.experiment.gan.clone()
            };
            let g = train_gan(&pool, &gcfg, margin, Some(&out))?;
            log::info!("event=gan_trained class={} pool={} checkpoint={}", class.name(), pool.len(), g.checkpoint_id);
        }
        Command::GanSample { checkpoint, n } => {
            let (g, side) = load_generator(checkpoint)?;
            let n = n.unwrap_or(cfg.synth_samples);
            let seed = derive_seed(cfg.seed, &["sample", &side.checkpoint_id]);
            let rois = synthesize(&g, side.class, &side.checkpoint_id, n, cfg.experiment.gan.latent, seed)?;
            for (k, chunk) in rois.chunks(64).enumerate() {
                tile_grid(chunk).write_png(&out.join(format!("grid_{k:03}.png")))?;
            }
            write_dataset(&Dataset::new("synthetic", rois), &out.join("samples"))?;
            log::info!("event=gan_sample class={} n={n} checkpoint={}", side.class.name(), side.checkpoint_id);
        }
        Command::ClfTrain { fold } => {
            let ds = input_dataset(&cfg)?;
            let (train, test) = match fold {
                Some(f) => {
                    let (a, b) = fold_train(&cfg, &ds, *f)?;
                    (a, Some(b))
                }
                None => (ds, None),
            };
            let ccfg = crate::classifier::ClassifierConfig {
                seed: derive_seed(cfg.seed, &["classifier"]),
                ..cfg.experiment.classifier.clone()
            };
            let trained = train_classifier(&train, &ccfg, margin)?;
            trained.model.save(&out.join("classifier.ck"))?;
            write_history(&trained.history, &out.join("history.csv"))?;
            if let Some(test) = test {
                let cm = evaluate(&trained.model, &test, margin)?;
                write_json(&cm, &out.join("confusion.json"))?;
                log::info!("event=clf_eval test={} accuracy={:.4}", test.len(), cm.accuracy()?);
            }
        }
        Command::Experiment => {
            let ds = input_dataset(&cfg)?;
            let r = run_experiment(&ds, cfg.mode, &cfg.experiment, cfg.seed, cfg.jobs, Some(&out))?;
            write_outputs(&r, &out)?;
            let best = r.optimal_point();
            log::info!(
                "event=experiment_done optimal_size={} optimal_accuracy={:.4} baseline_accuracy={:.4}",
                best.train_size_per_fold,
                best.mean_accuracy,
                r.classic[0].mean_accuracy
            );
        }
        Command::Report { files } => report(files, &out)?,
        Command::RaterExport { generators } => {
            let real = input_dataset(&cfg)?;
            let loaded: Vec<(Generator, GeneratorSidecar)> =
                generators.iter().map(|p| load_generator(p)).collect::<Result<_>>()?;
            let per = cfg.rater.n_synth.div_ceil(loaded.len());
            let mut synth = Vec::new();
            for (g, side) in &loaded {
                let seed = derive_seed(cfg.seed, &["rater", &side.checkpoint_id]);
                synth.extend(synthesize(g, side.class, &side.checkpoint_id, per, cfg.experiment.gan.latent, seed)?);
            }
            let synth = Dataset::new("synthetic", synth);
            let key = export_rater_set(&real, &synth, cfg.rater.n_real, cfg.rater.n_synth, cfg.seed, margin, &out)?;
            log::info!("event=rater_export items={}", key.len());
        }
    }
    Ok(())
}

/// Parses arguments, runs the subcommand and maps the outcome to an exit code.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    init_logging();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("event=failed command={} error=\"{e}\"", cli.command.name());
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { EXIT_VALIDATION } else { EXIT_RUNTIME })
        }
    }
}
