use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data_model::{Dataset, LesionClass};
use crate::error::{Error, Result};
use crate::seed::derived_rng;

/// Patient-level assignment to `k` folds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub k: usize,
    pub assignment: BTreeMap<String, usize>,
}

impl FoldSplit {
    pub fn fold_of(&self, patient_id: &str) -> Option<usize> {
        self.assignment.get(patient_id).copied()
    }

    /// `(train, test)` for held-out `fold`. Every item's patient must be
    /// assigned.
    pub fn split(&self, dataset: &Dataset, fold: usize) -> Result<(Dataset, Dataset)> {
        if fold >= self.k {
            return Err(Error::validation(format!("fold {fold} out of range for k={}", self.k)));
        }
        let mut train = Vec::new();
        let mut test = Vec::new();
        for roi in &dataset.items {
            let f = self.fold_of(&roi.patient_id).ok_or_else(|| {
                Error::validation(format!("patient {} has no fold assignment", roi.patient_id))
            })?;
            if f == fold {
                test.push(roi.clone());
            } else {
                train.push(roi.clone());
            }
        }
        Ok((
            Dataset::new(format!("{}-train{fold}", dataset.name), train),
            Dataset::new(format!("{}-test{fold}", dataset.name), test),
        ))
    }

    /// Per-fold class counts of `dataset`.
    pub fn class_counts(&self, dataset: &Dataset) -> Vec<[usize; 3]> {
        let mut out = vec![[0; 3]; self.k];
        for roi in &dataset.items {
            if let Some(f) = self.fold_of(&roi.patient_id) {
                out[f][roi.label.index()] += 1;
            }
        }
        out
    }
}

/// Greedy class-balanced patient split. Patients are visited largest first
/// (seeded shuffle breaks ties) and each goes to the fold where it adds the
/// least squared deviation from the per-class ideal `count/k`; remaining
/// ties go to the smaller fold, then the lower index.
pub fn make_folds(dataset: &Dataset, k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::validation(format!("need at least 2 folds, got {k}")));
    }
    let mut patients: BTreeMap<&str, [usize; 3]> = BTreeMap::new();
    for roi in &dataset.items {
        patients.entry(&roi.patient_id).or_default()[roi.label.index()] += 1;
    }
    for class in LesionClass::ALL {
        let n = patients.values().filter(|c| c[class.index()] > 0).count();
        if n > 0 && n < k {
            return Err(Error::validation(format!(
                "{} has {n} patients, fewer than the {k} folds",
                class.name()
            )));
        }
    }
    if patients.len() < k {
        return Err(Error::validation(format!(
            "{} patients cannot fill {k} folds",
            patients.len()
        )));
    }
    let totals = dataset.class_counts();
    let ideal: Vec<f64> = totals.iter().map(|&t| t as f64 / k as f64).collect();
    let mut order: Vec<(&str, [usize; 3])> = patients.into_iter().collect();
    order.shuffle(&mut derived_rng(seed, &["folds"]));
    order.sort_by_key(|(_, c)| std::cmp::Reverse(c.iter().sum::<usize>()));

    let mut counts = vec![[0usize; 3]; k];
    let mut assignment = BTreeMap::new();
    for (patient, pc) in order {
        let cost = |f: usize| -> f64 {
            (0..3)
                .map(|c| {
                    let before = counts[f][c] as f64 - ideal[c];
                    let after = before + pc[c] as f64;
                    after * after - before * before
                })
                .sum()
        };
        let size = |f: usize| counts[f].iter().sum::<usize>();
        let best = (0..k)
            .min_by(|&a, &b| cost(a).total_cmp(&cost(b)).then(size(a).cmp(&size(b))))
            .expect("k ≥ 2");
        for c in 0..3 {
            counts[best][c] += pc[c];
        }
        assignment.insert(patient.to_string(), best);
    }
    Ok(FoldSplit { k, assignment })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::{GrayImage, LesionRoi, Provenance};

    fn dataset(per_class: [usize; 3], lesions_per_patient: usize) -> Dataset {
        let mut items = Vec::new();
        for class in LesionClass::ALL {
            for i in 0..per_class[class.index()] {
                items.push(LesionRoi {
                    pixels: GrayImage::filled(4, 4, 0.5),
                    diameter_px: 2.0,
                    label: class,
                    patient_id: format!("{}-{}", class.index(), i / lesions_per_patient),
                    lesion_id: format!("{}-l{i}", class.index()),
                    provenance: Provenance::Real,
                });
            }
        }
        Dataset::new("t", items)
    }

    #[test]
    fn paper_sized_split_is_balanced() {
        let ds = dataset([53, 64, 65], 1);
        let split = make_folds(&ds, 3, 0).unwrap();
        let counts = split.class_counts(&ds);
        let sizes: Vec<usize> = counts.iter().map(|c| c.iter().sum()).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 182);
        for c in 0..3 {
            let v: Vec<usize> = counts.iter().map(|f| f[c]).collect();
            assert!(v.iter().max().unwrap() - v.iter().min().unwrap() <= 1, "{counts:?}");
        }
        assert!(sizes.iter().all(|&s| (60..=61).contains(&s)), "{sizes:?}");
    }

    #[test]
    fn splits_are_patient_disjoint() {
        let ds = dataset([10, 11, 12], 2);
        let split = make_folds(&ds, 3, 4).unwrap();
        for f in 0..3 {
            let (train, test) = split.split(&ds, f).unwrap();
            assert_eq!(train.len() + test.len(), ds.len());
            let tp = test.patients();
            assert!(train.items.iter().all(|r| !tp.contains_key(r.patient_id.as_str())));
        }
    }

    #[test]
    fn too_few_patients_is_an_error() {
        let ds = dataset([2, 2, 2], 1);
        assert!(make_folds(&ds, 3, 0).is_err());
        assert!(make_folds(&ds, 2, 0).is_ok());
    }
}
