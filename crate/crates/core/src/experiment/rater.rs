//! Blinded real-versus-synthetic image sets for visual assessment.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::{index::sample, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::data_model::{Dataset, LesionClass, LesionRoi};
use crate::error::{Error, Result};
use crate::seed::{derived_rng, sha256_hex};

/// One row of the hidden answer key.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaterEntry {
    pub file: String,
    pub class: LesionClass,
    pub provenance: String,
    pub lesion_id: String,
}

fn pick<'a>(ds: &'a Dataset, n: usize, seed: u64, what: &str) -> Result<Vec<&'a LesionRoi>> {
    if n > ds.len() {
        return Err(Error::validation(format!(
            "asked for {n} {what} images but only {} are available",
            ds.len()
        )));
    }
    let mut idx = sample(&mut derived_rng(seed, &["rater", what]), ds.len(), n).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| &ds.items[i]).collect())
}

/// Writes `n_real + n_synth` shuffled 64×64 PNGs under `dir/images` with
/// opaque names, plus `dir/key.csv`. Images are the canonical model views,
/// so real and synthetic files share size and framing.
pub fn export_rater_set(
    real: &Dataset,
    synth: &Dataset,
    n_real: usize,
    n_synth: usize,
    seed: u64,
    margin_frac: f64,
    dir: &Path,
) -> Result<Vec<RaterEntry>> {
    let mut chosen = pick(real, n_real, seed, "real")?;
    chosen.extend(pick(synth, n_synth, seed, "synthetic")?);
    chosen.shuffle(&mut derived_rng(seed, &["rater", "order"]));

    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut key = Vec::with_capacity(chosen.len());
    let mut names = BTreeSet::new();
    for (pos, roi) in chosen.into_iter().enumerate() {
        let digest = sha256_hex(format!("{seed}:{pos}:{}", roi.sample_key()).as_bytes());
        let file = format!("{}.png", &digest[..16]);
        if !names.insert(file.clone()) {
            return Err(Error::validation(format!("rater file name collision on {file}")));
        }
        roi.model_input(margin_frac)?.write_png(&images.join(&file))?;
        key.push(RaterEntry {
            file,
            class: roi.label,
            provenance: roi.provenance.kind().to_string(),
            lesion_id: roi.lesion_id.clone(),
        });
    }
    let key_path = dir.join("key.csv");
    let mut w = csv::Writer::from_path(&key_path)?;
    for e in &key {
        w.serialize(e)?;
    }
    w.flush().map_err(|e| Error::io(&key_path, e))?;
    Ok(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::{GrayImage, Provenance};

    fn items(prefix: &str, n: usize, synthetic: bool) -> Dataset {
        let items = (0..n)
            .map(|i| LesionRoi {
                pixels: GrayImage::filled(64, 64, i as f64 / n as f64),
                diameter_px: 40.0,
                label: LesionClass::from_index(i % 3).unwrap(),
                patient_id: format!("{prefix}p{i}"),
                lesion_id: format!("{prefix}{i}"),
                provenance: if synthetic {
                    Provenance::Synthetic {
                        checkpoint_id: "ck".into(),
                        index: i,
                    }
                } else {
                    Provenance::Real
                },
            })
            .collect();
        Dataset::new(prefix, items)
    }

    #[test]
    fn key_covers_every_file_once_and_is_reproducible() {
        let (real, synth) = (items("r", 12, false), items("s", 9, true));
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ka = export_rater_set(&real, &synth, 10, 6, 5, 0.25, a.path()).unwrap();
        let kb = export_rater_set(&real, &synth, 10, 6, 5, 0.25, b.path()).unwrap();
        assert_eq!(ka, kb);
        assert_eq!(ka.len(), 16);
        let files: BTreeSet<String> = fs::read_dir(a.path().join("images"))
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        let keyed: BTreeSet<String> = ka.iter().map(|e| e.file.clone()).collect();
        assert_eq!(files, keyed);
        assert_eq!(ka.iter().filter(|e| e.provenance == "synthetic").count(), 6);
    }

    #[test]
    fn oversized_request_fails() {
        let dir = tempfile::tempdir().unwrap();
        assert!(export_rater_set(&items("r", 3, false), &items("s", 3, true), 4, 1, 0, 0.25, dir.path()).is_err());
    }
}
