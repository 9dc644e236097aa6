//! Lineage tracking and the train/test separation guard.
//!
//! Real and classic-augmented samples descend from their source lesion.
//! Synthetic samples descend from every lesion in the pool their generator
//! was trained on; that lineage is recorded per checkpoint id when the
//! generator is registered. Samples from unregistered checkpoints are
//! treated as leaks because their lineage cannot be proven clean.

use std::collections::{BTreeMap, BTreeSet};

use crate::data_model::{Dataset, LesionRoi, Provenance};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
pub struct LineageRegistry {
    checkpoints: BTreeMap<String, BTreeSet<String>>,
}

impl LineageRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records that `checkpoint_id` was trained on `pool`.
    pub fn register(&mut self, checkpoint_id: &str, pool: &[LesionRoi]) -> Result<()> {
        let mut roots = BTreeSet::new();
        for roi in pool {
            roots.extend(self.lineage(roi)?);
        }
        self.checkpoints.insert(checkpoint_id.to_string(), roots);
        Ok(())
    }

    /// Root lesion ids `roi` derives from.
    pub fn lineage(&self, roi: &LesionRoi) -> Result<BTreeSet<String>> {
        match &roi.provenance {
            Provenance::Real => Ok(BTreeSet::from([roi.lesion_id.clone()])),
            Provenance::ClassicAug { source_lesion_id, .. } => Ok(BTreeSet::from([source_lesion_id.clone()])),
            Provenance::Synthetic { checkpoint_id, .. } => {
                self.checkpoints.get(checkpoint_id).cloned().ok_or_else(|| {
                    Error::Leakage(format!(
                        "sample {} comes from unregistered generator {checkpoint_id}",
                        roi.sample_key()
                    ))
                })
            }
        }
    }
}

/// Aborts with [`Error::Leakage`] if any training sample derives from a test
/// lesion or shares a patient with the test set.
pub fn check_no_leakage(train: &[LesionRoi], test: &Dataset, registry: &LineageRegistry) -> Result<()> {
    let test_ids: BTreeSet<&str> = test.items.iter().map(|r| r.lesion_id.as_str()).collect();
    let test_patients: BTreeSet<&str> = test.items.iter().map(|r| r.patient_id.as_str()).collect();
    for roi in train {
        if let Some(hit) = registry.lineage(roi)?.iter().find(|id| test_ids.contains(id.as_str())) {
            return Err(Error::Leakage(format!(
                "training sample {} derives from test lesion {hit}",
                roi.sample_key()
            )));
        }
        if !matches!(roi.provenance, Provenance::Synthetic { .. }) && test_patients.contains(roi.patient_id.as_str()) {
            return Err(Error::Leakage(format!(
                "training sample {} belongs to test patient {}",
                roi.sample_key(),
                roi.patient_id
            )));
        }
    }
    Ok(())
}
