//! Classic augmentation of one lesion and nested training groups over a
//! small set of lesions.
//!
//!     cargo run --release --example classic_augmentation -- [out_dir]

use std::path::PathBuf;

use synthaug::classic_aug::{augment, plan_size, AugmentationPlan};
use synthaug::data_model::{Provenance, DEFAULT_MARGIN_FRAC};
use synthaug::experiment::build_nested_groups;
use synthaug::phantom::{generate_phantom_dataset, PhantomConfig};

fn main() -> synthaug::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "out/classic_aug".into());
    std::fs::create_dir_all(&out).map_err(|e| synthaug::Error::Io { path: out.clone(), source: e })?;
    let ds = generate_phantom_dataset(&PhantomConfig {
        n_per_class: [4, 4, 4],
        patients_per_class: [4, 4, 4],
        ..Default::default()
    })?;

    let plan = AugmentationPlan::standard();
    let lesion = &ds.items[0];
    let samples = augment(lesion, &plan, 1, DEFAULT_MARGIN_FRAC)?;
    println!("{} augmentations of {} (plan size {})", samples.len(), lesion.lesion_id, plan_size(&plan));
    lesion.model_input(DEFAULT_MARGIN_FRAC)?.write_png(&out.join("original.png"))?;
    for s in samples.iter().step_by(60) {
        println!("  #{:03} θ={:6.1}° {:?}", s.transform.index, s.transform.theta_deg, s.transform.variant);
        s.pixels.write_png(&out.join(format!("aug_{:03}.png", s.transform.index)))?;
    }

    let schedule = [12, 60, 240, 1200];
    let groups = build_nested_groups(&ds, &plan, &schedule, 7, DEFAULT_MARGIN_FRAC)?;
    for i in 0..groups.len() {
        let derived = groups.group(i).iter().filter(|r| r.provenance != Provenance::Real).count();
        println!("group {}: {} samples ({} augmented)", i + 1, groups.group(i).len(), derived);
    }
    Ok(())
}
