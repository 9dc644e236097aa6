pub mod folds;
pub mod groups;
pub mod leakage;
pub mod metrics;
pub mod output;
pub mod rater;
pub mod run;
pub mod saturation;

pub use folds::{make_folds, FoldSplit};
pub use groups::{build_nested_groups, build_synth_groups, scale_schedule, ClassGenerator, NestedGroups};
pub use leakage::{check_no_leakage, LineageRegistry};
pub use metrics::{confusion_matrix, ConfusionMatrix, Metric, MetricSummary};
pub use output::{plot_curves, write_outputs};
pub use rater::{export_rater_set, RaterEntry};
pub use run::{run_experiment, CurvePoint, ExperimentConfig, ExperimentReport, Mode, Series};
pub use saturation::{find_saturation, DEFAULT_EPSILON};
