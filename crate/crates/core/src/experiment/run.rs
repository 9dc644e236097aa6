use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::folds::make_folds;
use super::groups::{build_nested_groups, build_synth_groups, scale_schedule, ClassGenerator, NestedGroups};
use super::leakage::{check_no_leakage, LineageRegistry};
use super::metrics::{ConfusionMatrix, MetricSummary};
use super::saturation::{find_saturation, DEFAULT_EPSILON};
use crate::classic_aug::AugmentationPlan;
use crate::classifier::{evaluate, train_classifier, ClassifierConfig};
use crate::data_model::{Dataset, LesionClass, LesionRoi, Provenance, DEFAULT_MARGIN_FRAC};
use crate::dcgan::{train_gan, GanTrainConfig};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, sha256_hex};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Classic augmentation curve only.
    Aug,
    /// Classic curve, then synthetic add-ons atop the optimal classic group.
    AugGan,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub folds: usize,
    pub plan: AugmentationPlan,
    /// Nominal training-set sizes per fold; the first entry stands for the
    /// unaugmented lesions and every entry is rescaled to the actual count.
    pub classic_schedule: Vec<usize>,
    /// Nominal synthetic add-on sizes, rescaled like the classic schedule.
    pub synth_schedule: Vec<usize>,
    pub saturation_eps: f64,
    pub margin_frac: f64,
    pub classifier: ClassifierConfig,
    pub gan: GanTrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            folds: 3,
            plan: AugmentationPlan::standard(),
            classic_schedule: vec![63, 250, 500, 1000, 2500, 5000, 10000, 20000, 30000],
            synth_schedule: vec![500, 1000, 3000, 5000, 8000, 12000],
            saturation_eps: DEFAULT_EPSILON,
            margin_frac: DEFAULT_MARGIN_FRAC,
            classifier: ClassifierConfig::default(),
            gan: GanTrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        self.classifier.validate()?;
        self.gan.validate()?;
        if self.classic_schedule.len() < 2 {
            return Err(Error::validation("classic schedule needs at least two entries"));
        }
        if self.classic_schedule.windows(2).any(|w| w[0] >= w[1])
            || self.synth_schedule.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::validation("schedules must be strictly increasing"));
        }
        if !(0.0..=1.0).contains(&self.margin_frac) {
            return Err(Error::validation("margin_frac must be in [0,1]"));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Series {
    Classic,
    Gan,
}

impl Series {
    pub fn name(self) -> &'static str {
        match self {
            Series::Classic => "classic",
            Series::Gan => "gan",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub series: Series,
    pub group_index: usize,
    /// Nominal training samples per fold (for the GAN series: optimal
    /// classic size plus the synthetic add-on).
    pub train_size_per_fold: usize,
    pub train_sizes: Vec<usize>,
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub metrics: Option<MetricSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub train_lesions: usize,
    pub test_lesions: usize,
    pub test_class_counts: [usize; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorRecord {
    pub fold: usize,
    pub class: LesionClass,
    pub seed: u64,
    pub pool_size: usize,
    pub checkpoint_id: String,
    pub final_d_loss: Option<f64>,
    pub final_g_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub series: Series,
    pub group_index: usize,
    pub fold: usize,
    pub train_size: usize,
    pub classifier_seed: u64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub mode: Mode,
    pub seed: u64,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub dataset: String,
    pub dataset_class_counts: [usize; 3],
    pub folds: Vec<FoldSummary>,
    pub classic: Vec<CurvePoint>,
    pub optimal_index: usize,
    pub gan: Vec<CurvePoint>,
    pub generators: Vec<GeneratorRecord>,
    pub runs: Vec<RunRecord>,
}

impl ExperimentReport {
    pub fn optimal_point(&self) -> &CurvePoint {
        &self.classic[self.optimal_index]
    }
}

struct Task<'a> {
    group_index: usize,
    fold: usize,
    train: Vec<&'a [LesionRoi]>,
    seed: u64,
}

struct Outcome {
    accuracy: f64,
    confusion: ConfusionMatrix,
    train_size: usize,
}

fn run_tasks(
    tasks: &[Task<'_>],
    test: &Dataset,
    cfg: &ExperimentConfig,
    registry: &LineageRegistry,
    jobs: usize,
) -> Result<Vec<Outcome>> {
    let one = |t: &Task<'_>| -> Result<Outcome> {
        let items: Vec<LesionRoi> = t.train.iter().flat_map(|s| s.iter().cloned()).collect();
        check_no_leakage(&items, test, registry)?;
        let set = Dataset::new(format!("fold{}-group{}", t.fold, t.group_index + 1), items);
        let clf = ClassifierConfig {
            seed: t.seed,
            ..cfg.classifier.clone()
        };
        let trained = train_classifier(&set, &clf, cfg.margin_frac)?;
        let confusion = evaluate(&trained.model, test, cfg.margin_frac)?;
        Ok(Outcome {
            accuracy: confusion.accuracy()?,
            confusion,
            train_size: set.len(),
        })
    };
    if jobs <= 1 {
        return tasks.iter().map(one).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Training(format!("thread pool: {e}")))?;
    pool.install(|| tasks.par_iter().map(one).collect())
}

fn aggregate(series: Series, index: usize, nominal: usize, per_fold: Vec<&Outcome>) -> CurvePoint {
    let mut confusion = ConfusionMatrix::default();
    for o in &per_fold {
        confusion.add(&o.confusion);
    }
    let fold_accuracies: Vec<f64> = per_fold.iter().map(|o| o.accuracy).collect();
    CurvePoint {
        series,
        group_index: index,
        train_size_per_fold: nominal,
        train_sizes: per_fold.iter().map(|o| o.train_size).collect(),
        mean_accuracy: fold_accuracies.iter().sum::<f64>() / fold_accuracies.len() as f64,
        fold_accuracies,
        confusion,
        metrics: confusion.summary().ok(),
    }
}

/// Synthetic add-on sizes for a pool of `n` lesions, rounded to whole
/// per-class counts.
fn scale_synth(schedule: &[usize], base: usize, n: usize) -> Vec<usize> {
    schedule
        .iter()
        .map(|&s| 3 * ((s as f64 * n as f64 / (3.0 * base as f64)).round() as usize).max(1))
        .collect()
}

/// Runs the cross-validated protocol. Writes nothing itself except GAN
/// artifacts under `out_dir/gan` when `out_dir` is given; see
/// [`super::output::write_outputs`] for the report files.
pub fn run_experiment(
    dataset: &Dataset,
    mode: Mode,
    cfg: &ExperimentConfig,
    seed: u64,
    jobs: usize,
    out_dir: Option<&Path>,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    dataset.validate()?;
    if let Some(bad) = dataset.items.iter().find(|r| r.provenance != Provenance::Real) {
        return Err(Error::validation(format!(
            "experiment input must hold real lesions only; found {}",
            bad.sample_key()
        )));
    }
    let split = make_folds(dataset, cfg.folds, derive_seed(seed, &["folds"]))?;
    let mut registry = LineageRegistry::new();
    let mut folds = Vec::with_capacity(cfg.folds);
    let mut splits = Vec::with_capacity(cfg.folds);
    for f in 0..cfg.folds {
        let (train, test) = split.split(dataset, f)?;
        folds.push(FoldSummary {
            fold: f,
            train_lesions: train.len(),
            test_lesions: test.len(),
            test_class_counts: test.class_counts(),
        });
        splits.push((train, test));
    }
    let group_seed = |f: usize| derive_seed(seed, &["groups", &f.to_string()]);
    let clf_seed = |s: Series, i: usize, f: usize| {
        derive_seed(seed, &["classifier", s.name(), &i.to_string(), &f.to_string()])
    };

    let mut runs = Vec::new();
    let n_classic = cfg.classic_schedule.len();
    let mut classic_outcomes: Vec<Vec<Outcome>> = (0..n_classic).map(|_| Vec::new()).collect();
    for (f, (train, test)) in splits.iter().enumerate() {
        let sizes = scale_schedule(&cfg.classic_schedule, train.len())?;
        let groups = build_nested_groups(train, &cfg.plan, &sizes, group_seed(f), cfg.margin_frac)?;
        let tasks: Vec<Task> = (0..n_classic)
            .map(|i| Task {
                group_index: i,
                fold: f,
                train: vec![groups.group(i)],
                seed: clf_seed(Series::Classic, i, f),
            })
            .collect();
        for (t, o) in tasks.iter().zip(run_tasks(&tasks, test, cfg, &registry, jobs)?) {
            log::info!(
                "event=point series=classic group={} fold={f} train_size={} accuracy={:.4}",
                t.group_index + 1,
                o.train_size,
                o.accuracy
            );
            runs.push(RunRecord {
                series: Series::Classic,
                group_index: t.group_index,
                fold: f,
                train_size: o.train_size,
                classifier_seed: t.seed,
                accuracy: o.accuracy,
            });
            classic_outcomes[t.group_index].push(o);
        }
    }
    let classic: Vec<CurvePoint> = classic_outcomes
        .iter()
        .enumerate()
        .map(|(i, os)| aggregate(Series::Classic, i, cfg.classic_schedule[i], os.iter().collect()))
        .collect();
    let means: Vec<f64> = classic.iter().map(|p| p.mean_accuracy).collect();
    let optimal_index = find_saturation(&means, cfg.saturation_eps)?;
    log::info!(
        "event=saturation index={} group_size={} accuracy={:.4}",
        optimal_index + 1,
        cfg.classic_schedule[optimal_index],
        means[optimal_index]
    );

    let mut gan = Vec::new();
    let mut generators = Vec::new();
    if mode == Mode::AugGan && !cfg.synth_schedule.is_empty() {
        let n_synth = cfg.synth_schedule.len();
        let mut outcomes: Vec<Vec<Outcome>> = (0..n_synth).map(|_| Vec::new()).collect();
        for (f, (train, test)) in splits.iter().enumerate() {
            let sizes = scale_schedule(&cfg.classic_schedule, train.len())?;
            let groups: NestedGroups =
                build_nested_groups(train, &cfg.plan, &sizes[..=optimal_index], group_seed(f), cfg.margin_frac)?;
            let base = groups.group(optimal_index);
            let mut trained = Vec::with_capacity(3);
            for class in LesionClass::ALL {
                let pool: Vec<LesionRoi> = base.iter().filter(|r| r.label == class).cloned().collect();
                check_no_leakage(&pool, test, &registry)?;
                let gseed = derive_seed(seed, &["gan", &f.to_string(), class.name()]);
                let gcfg = GanTrainConfig {
                    seed: gseed,
                    ..cfg.gan.clone()
                };
                let dir = out_dir.map(|d| d.join("gan").join(format!("fold{f}")).join(class.name()));
                let pool_ds = Dataset::new(format!("fold{f}-{}", class.name()), pool);
                let g = train_gan(&pool_ds, &gcfg, cfg.margin_frac, dir.as_deref())?;
                registry.register(&g.checkpoint_id, &pool_ds.items)?;
                log::info!(
                    "event=gan_trained fold={f} class={} pool={} checkpoint={}",
                    class.name(),
                    pool_ds.len(),
                    g.checkpoint_id
                );
                generators.push(GeneratorRecord {
                    fold: f,
                    class,
                    seed: gseed,
                    pool_size: pool_ds.len(),
                    checkpoint_id: g.checkpoint_id.clone(),
                    final_d_loss: g.history.last().map(|h| h.d_loss),
                    final_g_loss: g.history.last().map(|h| h.g_loss),
                });
                trained.push(g);
            }
            let cg: Vec<ClassGenerator> = trained
                .iter()
                .map(|g| ClassGenerator {
                    class: g.class,
                    generator: &g.generator,
                    checkpoint_id: g.checkpoint_id.clone(),
                })
                .collect();
            let synth_sizes = scale_synth(&cfg.synth_schedule, cfg.classic_schedule[0], train.len());
            let synth = build_synth_groups(
                &cg,
                &synth_sizes,
                cfg.gan.latent,
                derive_seed(seed, &["synth", &f.to_string()]),
            )?;
            let tasks: Vec<Task> = (0..n_synth)
                .map(|j| Task {
                    group_index: j,
                    fold: f,
                    train: vec![base, synth.group(j)],
                    seed: clf_seed(Series::Gan, j, f),
                })
                .collect();
            for (t, o) in tasks.iter().zip(run_tasks(&tasks, test, cfg, &registry, jobs)?) {
                log::info!(
                    "event=point series=gan group={} fold={f} train_size={} accuracy={:.4}",
                    t.group_index + 1,
                    o.train_size,
                    o.accuracy
                );
                runs.push(RunRecord {
                    series: Series::Gan,
                    group_index: t.group_index,
                    fold: f,
                    train_size: o.train_size,
                    classifier_seed: t.seed,
                    accuracy: o.accuracy,
                });
                outcomes[t.group_index].push(o);
            }
        }
        let opt_nominal = cfg.classic_schedule[optimal_index];
        gan = outcomes
            .iter()
            .enumerate()
            .map(|(j, os)| aggregate(Series::Gan, j, opt_nominal + cfg.synth_schedule[j], os.iter().collect()))
            .collect();
    }

    Ok(ExperimentReport {
        mode,
        seed,
        config_hash: cfg.hash(),
        config: cfg.clone(),
        dataset: dataset.name.clone(),
        dataset_class_counts: dataset.class_counts(),
        folds,
        classic,
        optimal_index,
        gan,
        generators,
        runs,
    })
}
