//! Trains the lesion classifier on two folds of the phantom dataset and
//! evaluates it on the held-out fold, with and without classic augmentation.

use synthaug::classic_aug::AugmentationPlan;
use synthaug::classifier::{evaluate, train_classifier, ClassifierConfig};
use synthaug::data_model::DEFAULT_MARGIN_FRAC;
use synthaug::experiment::{build_nested_groups, make_folds, scale_schedule};
use synthaug::phantom::{generate_phantom_dataset, PhantomConfig};

fn main() -> synthaug::Result<()> {
    let ds = generate_phantom_dataset(&PhantomConfig::default())?;
    let (train, test) = make_folds(&ds, 3, 0)?.split(&ds, 0)?;
    let sizes = scale_schedule(&[63, 500], train.len())?;
    let groups = build_nested_groups(&train, &AugmentationPlan::standard(), &sizes, 1, DEFAULT_MARGIN_FRAC)?;
    let cfg = ClassifierConfig {
        channels: vec![8, 16, 32],
        dense_hidden: 64,
        batch_size: 32,
        epochs: 5,
        seed: 3,
        ..Default::default()
    };
    for i in 0..groups.len() {
        let set = groups.dataset(i, "group");
        let trained = train_classifier(&set, &cfg, DEFAULT_MARGIN_FRAC)?;
        let cm = evaluate(&trained.model, &test, DEFAULT_MARGIN_FRAC)?;
        let last = trained.history.last().expect("at least one epoch");
        println!(
            "{} training samples: final train loss {:.3}, test accuracy {:.3}",
            set.len(),
            last.train_loss,
            cm.accuracy()?
        );
        println!("  confusion {:?}", cm.counts);
    }
    Ok(())
}
