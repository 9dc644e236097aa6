//! Per-class and prevalence-weighted metrics for two stored confusion
//! matrices (rows = true class, columns = prediction).

use synthaug::data_model::LesionClass;
use synthaug::experiment::{ConfusionMatrix, Metric};

fn show(name: &str, cm: &ConfusionMatrix) -> synthaug::Result<()> {
    println!("{name}");
    for c in LesionClass::ALL {
        println!(
            "  {:<11} sens {:5.1}%  spec {:5.1}%",
            c.name(),
            100.0 * cm.sensitivity(c)?,
            100.0 * cm.specificity(c)?
        );
    }
    println!(
        "  weighted    sens {:5.1}%  spec {:5.1}%  accuracy {:5.1}%",
        100.0 * cm.weighted_aggregate(Metric::Sensitivity)?,
        100.0 * cm.weighted_aggregate(Metric::Specificity)?,
        100.0 * cm.accuracy()?
    );
    Ok(())
}

fn main() -> synthaug::Result<()> {
    show("classic augmentation", &ConfusionMatrix::new([[52, 1, 0], [2, 44, 18], [0, 18, 47]]))?;
    show("classic + synthetic", &ConfusionMatrix::new([[53, 0, 0], [2, 52, 10], [1, 13, 51]]))
}
