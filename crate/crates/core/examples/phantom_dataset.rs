//! Generates the phantom dataset, writes it as PNG + manifest, and reports
//! how separable the classes are for a raw-pixel nearest-centroid baseline.
//!
//!     cargo run --release --example phantom_dataset -- [out_dir]

use std::path::PathBuf;

use synthaug::data_model::{load_dataset, write_dataset, DEFAULT_MARGIN_FRAC};
use synthaug::phantom::{generate_phantom_dataset, nearest_centroid_accuracy, PhantomConfig};

fn main() -> synthaug::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "out/phantom".into());
    for separability in [0.0, 0.35, 0.7, 1.0] {
        let ds = generate_phantom_dataset(&PhantomConfig {
            separability,
            ..Default::default()
        })?;
        let acc = nearest_centroid_accuracy(&ds, DEFAULT_MARGIN_FRAC, 0)?;
        println!("separability {separability:.2}: nearest-centroid accuracy {acc:.3}");
    }
    let ds = generate_phantom_dataset(&PhantomConfig::default())?;
    write_dataset(&ds, &out)?;
    let back = load_dataset(&out.join("manifest.csv"), &out)?;
    println!(
        "wrote {} lesions from {} patients to {} (class counts {:?}, reload ok: {})",
        ds.len(),
        ds.patients().len(),
        out.display(),
        ds.class_counts(),
        back.len() == ds.len()
    );
    Ok(())
}
