//! Trains a reduced-width generator on one phantom class and writes an
//! 8×8 grid of samples next to the checkpoint.
//!
//!     cargo run --release --example gan_training -- [class] [epochs] [out_dir]

use std::path::PathBuf;

use synthaug::data_model::{LesionClass, DEFAULT_MARGIN_FRAC};
use synthaug::dcgan::{synthesize, tile_grid, train_gan, GanTrainConfig, LatentPrior};
use synthaug::phantom::{generate_phantom_dataset, PhantomConfig};

fn main() -> synthaug::Result<()> {
    let mut args = std::env::args().skip(1);
    let class: LesionClass = args.next().as_deref().unwrap_or("hemangioma").parse()?;
    let epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(30);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| "out/gan".into());

    let pool = generate_phantom_dataset(&PhantomConfig::default())?.of_class(class);
    let cfg = GanTrainConfig {
        channels: [64, 32, 16, 8],
        batch_size: 16,
        epochs,
        checkpoint_every: 10,
        seed: 1,
        ..Default::default()
    };
    let trained = train_gan(&pool, &cfg, DEFAULT_MARGIN_FRAC, Some(&out))?;
    for h in trained.history.iter().step_by(5) {
        println!("epoch {:3}  d_loss {:.4}  g_loss {:.4}", h.epoch, h.d_loss, h.g_loss);
    }
    let samples = synthesize(&trained.generator, class, &trained.checkpoint_id, 64, LatentPrior::Uniform, 2)?;
    tile_grid(&samples).write_png(&out.join("samples.png"))?;
    println!("checkpoint {} and samples.png in {}", trained.checkpoint_id, out.display());
    Ok(())
}
