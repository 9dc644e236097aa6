//! Nested training groups `D₁ ⊂ D₂ ⊂ …`.
//!
//! Groups are stored as one pool ordered so that every group is a prefix of
//! it. Classic groups start with the original lesions; each lesion then
//! receives `⌊(S−n)/n⌋` augmentations, plus one more for the first
//! `(S−n) mod n` lesions of a seeded lesion order. A lesion's augmentations
//! are a prefix of a seeded permutation of its plan, so a larger group only
//! ever adds samples.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::classic_aug::{lesion_seed, plan_size, plan_transforms, render, AugmentationPlan};
use crate::data_model::{Dataset, LesionClass, LesionRoi, Provenance};
use crate::dcgan::{synthesize, Generator, LatentPrior};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, derived_rng};

#[derive(Clone, Debug, PartialEq)]
pub struct NestedGroups {
    pub pool: Vec<LesionRoi>,
    pub sizes: Vec<usize>,
}

impl NestedGroups {
    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn group(&self, i: usize) -> &[LesionRoi] {
        &self.pool[..self.sizes[i]]
    }

    pub fn dataset(&self, i: usize, name: &str) -> Dataset {
        Dataset::new(format!("{name}{}", i + 1), self.group(i).to_vec())
    }
}

fn check_increasing(schedule: &[usize]) -> Result<()> {
    if schedule.is_empty() {
        return Err(Error::validation("schedule is empty"));
    }
    if schedule.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::validation(format!("schedule must be strictly increasing: {schedule:?}")));
    }
    Ok(())
}

/// Augmentations per lesion for a group of `size` over `n` lesions, where
/// `rank[j]` is lesion `j`'s position in the seeded order.
fn per_lesion_counts(size: usize, n: usize, rank: &[usize]) -> Vec<usize> {
    let extra = size - n;
    let (q, r) = (extra / n, extra % n);
    rank.iter().map(|&pos| q + usize::from(pos < r)).collect()
}

/// Builds classic groups over the real lesions of `train`. `schedule[0]`
/// must equal the number of lesions and the largest entry must fit in
/// `n·(1 + plan_size(plan))`.
pub fn build_nested_groups(
    train: &Dataset,
    plan: &AugmentationPlan,
    schedule: &[usize],
    seed: u64,
    margin_frac: f64,
) -> Result<NestedGroups> {
    plan.validate()?;
    check_increasing(schedule)?;
    let n = train.len();
    if let Some(bad) = train.items.iter().find(|r| r.provenance != Provenance::Real) {
        return Err(Error::validation(format!(
            "nested groups are built from real lesions; got {}",
            bad.sample_key()
        )));
    }
    if schedule[0] != n {
        return Err(Error::validation(format!(
            "first group must hold the {n} original lesions, schedule starts at {}",
            schedule[0]
        )));
    }
    let max = *schedule.last().expect("non-empty");
    let cap = n * (1 + plan_size(plan));
    if max > cap {
        return Err(Error::validation(format!(
            "group of {max} exceeds the augmentation pool of {cap} ({n} lesions × (1 + {}))",
            plan_size(plan)
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut derived_rng(seed, &["group_order"]));
    let mut rank = vec![0; n];
    for (pos, &j) in order.iter().enumerate() {
        rank[j] = pos;
    }
    let counts: Vec<Vec<usize>> = schedule.iter().map(|&s| per_lesion_counts(s, n, &rank)).collect();
    let aug_seed = derive_seed(seed, &["augment"]);

    // (first group index, lesion rank, augmentation slot) → sample
    let mut keyed: BTreeMap<(usize, usize, usize), LesionRoi> = BTreeMap::new();
    for (j, roi) in train.items.iter().enumerate() {
        let need = counts.last().expect("non-empty")[j];
        if need == 0 {
            continue;
        }
        let lseed = lesion_seed(aug_seed, &roi.lesion_id);
        let records = plan_transforms(roi.diameter_px, plan, lseed)?;
        let mut perm: Vec<usize> = (0..records.len()).collect();
        perm.shuffle(&mut derived_rng(lseed, &["subset"]));
        let mut chosen: Vec<(usize, usize)> = perm[..need].iter().enumerate().map(|(slot, &i)| (i, slot)).collect();
        chosen.sort_unstable();
        let subset: Vec<_> = chosen.iter().map(|&(i, _)| records[i]).collect();
        for (sample, &(_, slot)) in render(roi, &subset, margin_frac)?.into_iter().zip(&chosen) {
            let first = counts.iter().position(|c| c[j] > slot).expect("slot below max count");
            keyed.insert((first, rank[j], slot), sample.into_roi(roi));
        }
    }
    let mut pool = train.items.clone();
    pool.extend(keyed.into_values());
    Ok(NestedGroups {
        pool,
        sizes: schedule.to_vec(),
    })
}

/// Scales per-fold nominal sizes to a pool of `n` lesions:
/// `round(entry · n / schedule[0])`, with the first entry becoming `n`.
pub fn scale_schedule(schedule: &[usize], n: usize) -> Result<Vec<usize>> {
    check_increasing(schedule)?;
    let base = schedule[0] as f64;
    if base == 0.0 {
        return Err(Error::validation("schedule must start above zero"));
    }
    let out: Vec<usize> = schedule.iter().map(|&s| (s as f64 * n as f64 / base).round() as usize).collect();
    check_increasing(&out)?;
    Ok(out)
}

/// A trained generator with the identifier stamped on its samples.
#[derive(Clone, Debug)]
pub struct ClassGenerator<'a> {
    pub class: LesionClass,
    pub generator: &'a Generator,
    pub checkpoint_id: String,
}

/// Builds class-balanced synthetic groups. Every entry must be divisible by
/// three; group `i` holds the first `schedule[i]/3` samples of each class.
pub fn build_synth_groups(
    generators: &[ClassGenerator<'_>],
    schedule: &[usize],
    prior: LatentPrior,
    seed: u64,
) -> Result<NestedGroups> {
    check_increasing(schedule)?;
    if let Some(bad) = schedule.iter().find(|&&s| s % 3 != 0) {
        return Err(Error::validation(format!(
            "synthetic group size {bad} cannot be split evenly over three classes"
        )));
    }
    let mut by_class = Vec::with_capacity(3);
    for class in LesionClass::ALL {
        let g = generators
            .iter()
            .find(|g| g.class == class)
            .ok_or_else(|| Error::validation(format!("no generator for {}", class.name())))?;
        by_class.push(g);
    }
    let per_class_max = schedule.last().expect("non-empty") / 3;
    let samples: Vec<Vec<LesionRoi>> = by_class
        .iter()
        .map(|g| {
            let s = derive_seed(seed, &["synth", g.class.name()]);
            synthesize(g.generator, g.class, &g.checkpoint_id, per_class_max, prior, s)
        })
        .collect::<Result<_>>()?;
    let mut pool = Vec::with_capacity(per_class_max * 3);
    let mut start = 0;
    for &size in schedule {
        let end = size / 3;
        for class_samples in &samples {
            pool.extend_from_slice(&class_samples[start..end]);
        }
        start = end;
    }
    Ok(NestedGroups {
        pool,
        sizes: schedule.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::GrayImage;
    use crate::seed::rng_from;
    use std::collections::BTreeSet;

    fn lesions(n: usize) -> Dataset {
        let items = (0..n)
            .map(|i| LesionRoi {
                pixels: GrayImage::from_fn(24, 24, |r, c| ((r * 3 + c * 5 + i) % 11) as f64 / 10.0),
                diameter_px: 13.0,
                label: LesionClass::from_index(i % 3).unwrap(),
                patient_id: format!("p{i}"),
                lesion_id: format!("l{i}"),
                provenance: Provenance::Real,
            })
            .collect();
        Dataset::new("t", items)
    }

    #[test]
    fn groups_nest_and_balance() {
        let ds = lesions(5);
        let plan = AugmentationPlan::new(2, 3, 2, 1);
        let g = build_nested_groups(&ds, &plan, &[5, 8, 17, 40], 1, 0.25).unwrap();
        assert_eq!(g.group(0), &ds.items[..]);
        for i in 0..g.len() {
            let grp = g.group(i);
            assert_eq!(grp.len(), g.sizes[i]);
            let mut per = BTreeMap::new();
            for r in grp.iter().filter(|r| r.provenance != Provenance::Real) {
                *per.entry(r.lesion_id.clone()).or_insert(0) += 1;
            }
            let extra = g.sizes[i] - 5;
            let lo = extra / 5;
            assert!(per.values().all(|&c| c == lo || c == lo + 1));
            let keys: BTreeSet<String> = grp.iter().map(|r| r.sample_key()).collect();
            assert_eq!(keys.len(), grp.len());
        }
    }

    #[test]
    fn group_contents_do_not_depend_on_later_entries() {
        let ds = lesions(4);
        let plan = AugmentationPlan::new(2, 3, 2, 1);
        let a = build_nested_groups(&ds, &plan, &[4, 9], 3, 0.25).unwrap();
        let b = build_nested_groups(&ds, &plan, &[4, 9, 30], 3, 0.25).unwrap();
        let ka: BTreeSet<String> = a.group(1).iter().map(|r| r.sample_key()).collect();
        let kb: BTreeSet<String> = b.group(1).iter().map(|r| r.sample_key()).collect();
        assert_eq!(ka, kb);
    }

    #[test]
    fn oversized_schedule_is_rejected() {
        let ds = lesions(3);
        let plan = AugmentationPlan::new(1, 0, 1, 0);
        assert!(build_nested_groups(&ds, &plan, &[3, 9], 0, 0.25).is_ok());
        assert!(build_nested_groups(&ds, &plan, &[3, 10], 0, 0.25).is_err());
        assert!(build_nested_groups(&ds, &plan, &[4, 9], 0, 0.25).is_err());
    }

    #[test]
    fn scaling_keeps_first_entry_at_pool_size() {
        assert_eq!(scale_schedule(&[63, 500, 2000], 121).unwrap(), vec![121, 960, 3841]);
        assert_eq!(scale_schedule(&[63, 500], 63).unwrap(), vec![63, 500]);
    }

    #[test]
    fn synthetic_groups_are_balanced_and_nested() {
        let gens: Vec<Generator> = (0..3).map(|i| Generator::new([4, 2, 2, 2], 0.02, &mut rng_from(i))).collect();
        let cg: Vec<ClassGenerator> = LesionClass::ALL
            .iter()
            .zip(&gens)
            .map(|(&class, g)| ClassGenerator {
                class,
                generator: g,
                checkpoint_id: format!("ck{}", class.index()),
            })
            .collect();
        let g = build_synth_groups(&cg, &[6, 15, 30], LatentPrior::Uniform, 2).unwrap();
        for i in 0..3 {
            let counts = Dataset::new("s", g.group(i).to_vec()).class_counts();
            assert_eq!(counts, [g.sizes[i] / 3; 3]);
        }
        let again = build_synth_groups(&cg, &[6, 15, 30], LatentPrior::Uniform, 2).unwrap();
        assert_eq!(g, again);
        assert!(build_synth_groups(&cg, &[6, 16], LatentPrior::Uniform, 2).is_err());
        assert!(build_synth_groups(&cg[..2], &[6], LatentPrior::Uniform, 2).is_err());
    }
}
