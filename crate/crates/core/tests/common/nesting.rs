use std::collections::BTreeSet;

use synthaug::classic_aug::{plan_size, AugmentationPlan};
use synthaug::data_model::{Dataset, GrayImage, LesionClass, LesionRoi, Provenance};
use synthaug::experiment::build_nested_groups;

pub fn lesions(per_class: [usize; 3], per_patient: usize) -> Dataset {
    let mut items = Vec::new();
    for class in LesionClass::ALL {
        for i in 0..per_class[class.index()] {
            items.push(LesionRoi {
                pixels: GrayImage::from_fn(20, 20, |r, c| ((r * 7 + c * 3 + i) % 13) as f64 / 12.0),
                diameter_px: 11.0,
                label: class,
                patient_id: format!("{}-p{}", class.name(), i / per_patient),
                lesion_id: format!("{}-l{i}", class.name()),
                provenance: Provenance::Real,
            });
        }
    }
    Dataset::new("prop", items)
}

/// Schedule starting at `n` built from positive increments, capped at the
/// pool size of `plan`.
pub fn schedule(n: usize, steps: &[usize], plan: &AugmentationPlan) -> Vec<usize> {
    let cap = n * (1 + plan_size(plan));
    let mut out = vec![n];
    for &s in steps {
        let next = (out.last().unwrap() + s).min(cap);
        if next > *out.last().unwrap() {
            out.push(next);
        }
    }
    out
}

/// Builds groups over `n` lesions and checks sizes, originals-first,
/// per-lesion balance within ±1 and sample-identity nesting.
pub fn check_nesting(n: usize, steps: &[usize], seed: u64) -> Result<(), String> {
    let ds = lesions([n, 0, 0], 1);
    let plan = AugmentationPlan::new(2, 3, 2, 1);
    let sched = schedule(n, steps, &plan);
    let g = build_nested_groups(&ds, &plan, &sched, seed, 0.25).map_err(|e| e.to_string())?;
    if g.group(0) != &ds.items[..] {
        return Err("first group is not the originals".into());
    }
    let keys = |i: usize| -> BTreeSet<String> { g.group(i).iter().map(|r| r.sample_key()).collect() };
    for i in 0..g.len() {
        if keys(i).len() != sched[i] {
            return Err(format!("group {i} has {} distinct samples, want {}", keys(i).len(), sched[i]));
        }
        let mut per = vec![0usize; n];
        for r in g.group(i).iter().filter(|r| r.provenance != Provenance::Real) {
            per[ds.items.iter().position(|o| o.lesion_id == r.lesion_id).unwrap()] += 1;
        }
        if per.iter().max().unwrap() - per.iter().min().unwrap() > 1 {
            return Err(format!("group {i} per-lesion counts {per:?}"));
        }
        if i > 0 && !keys(i - 1).is_subset(&keys(i)) {
            return Err(format!("group {} is not contained in group {i}", i - 1));
        }
    }
    Ok(())
}
