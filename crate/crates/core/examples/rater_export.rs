//! Exports a blinded real-versus-synthetic set: shuffled PNGs under opaque
//! names plus a hidden key.csv.
//!
//!     cargo run --release --example rater_export -- [out_dir]

use std::path::PathBuf;

use synthaug::data_model::{Dataset, LesionClass, DEFAULT_MARGIN_FRAC};
use synthaug::dcgan::{synthesize, train_gan, GanTrainConfig, LatentPrior};
use synthaug::experiment::export_rater_set;
use synthaug::phantom::{generate_phantom_dataset, PhantomConfig};

fn main() -> synthaug::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "out/rater".into());
    let real = generate_phantom_dataset(&PhantomConfig::default())?;
    let mut synth = Vec::new();
    for class in LesionClass::ALL {
        let cfg = GanTrainConfig {
            channels: [32, 16, 8, 4],
            batch_size: 16,
            epochs: 10,
            ..Default::default()
        };
        let g = train_gan(&real.of_class(class), &cfg, DEFAULT_MARGIN_FRAC, None)?;
        synth.extend(synthesize(&g.generator, class, &g.checkpoint_id, 40, LatentPrior::Uniform, 1)?);
    }
    let key = export_rater_set(&real, &Dataset::new("synthetic", synth), 182, 120, 5, DEFAULT_MARGIN_FRAC, &out)?;
    let n_synth = key.iter().filter(|e| e.provenance == "synthetic").count();
    println!("{} images ({} synthetic) in {}", key.len(), n_synth, out.display());
    Ok(())
}
