mod common;

use std::collections::BTreeSet;

use common::nesting::{self, lesions};
use proptest::prelude::*;
use synthaug::experiment::{find_saturation, make_folds, ConfusionMatrix, Metric};
use synthaug::nn::{conv2d, conv2d_transpose, conv_output_size, conv_transpose_output_size, Tensor4};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn folds_partition_patients(
        per_class in prop::array::uniform3(6usize..30),
        per_patient in 1usize..3,
        k in 2usize..4,
        seed in any::<u64>(),
    ) {
        let ds = lesions(per_class, per_patient);
        let split = make_folds(&ds, k, seed).unwrap();
        let patients: BTreeSet<&str> = ds.items.iter().map(|r| r.patient_id.as_str()).collect();
        prop_assert_eq!(split.assignment.len(), patients.len());
        prop_assert!(split.assignment.values().all(|&f| f < k));
        let mut total = 0;
        for f in 0..k {
            let (train, test) = split.split(&ds, f).unwrap();
            prop_assert_eq!(train.len() + test.len(), ds.len());
            let tp: BTreeSet<&str> = test.items.iter().map(|r| r.patient_id.as_str()).collect();
            prop_assert!(train.items.iter().all(|r| !tp.contains(r.patient_id.as_str())));
            total += test.len();
        }
        prop_assert_eq!(total, ds.len());
        prop_assert_eq!(make_folds(&ds, k, seed).unwrap(), split);
    }

    #[test]
    fn classic_groups_nest_and_balance(
        n in 2usize..6,
        steps in prop::collection::vec(1usize..12, 1..4),
        seed in any::<u64>(),
    ) {
        let checked = nesting::check_nesting(n, &steps, seed);
        prop_assert!(checked.is_ok(), "{:?}", checked);
    }

    #[test]
    fn saturation_is_monotone_in_epsilon(
        acc in prop::collection::vec(0.0f64..1.0, 2..12),
        e1 in 0.0f64..0.2,
        e2 in 0.0f64..0.2,
    ) {
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let a = find_saturation(&acc, lo).unwrap();
        let b = find_saturation(&acc, hi).unwrap();
        prop_assert!(b <= a);
        // brute-force definition
        let brute = (0..acc.len()).find(|&i| acc[i + 1..].iter().all(|&v| v <= acc[i] + lo)).unwrap();
        prop_assert_eq!(a, brute);
    }

    #[test]
    fn conv_shapes_follow_the_formulas(
        side in 1usize..14,
        k in 1usize..5,
        stride in 1usize..4,
        pad in 0usize..3,
        op in 0usize..3,
    ) {
        let x = Tensor4::filled([1, 2, side, side], 0.5);
        let w = Tensor4::filled([3, 2, k, k], 0.1);
        match conv_output_size(side, k, stride, pad) {
            Some(out) => prop_assert_eq!(conv2d(&x, &w, None, stride, pad).unwrap().shape(), [1, 3, out, out]),
            None => prop_assert!(conv2d(&x, &w, None, stride, pad).is_err()),
        }
        let wt = Tensor4::filled([2, 3, k, k], 0.1);
        match conv_transpose_output_size(side, k, stride, pad, op) {
            Some(out) => prop_assert_eq!(conv2d_transpose(&x, &wt, None, stride, pad, op).unwrap().shape(), [1, 3, out, out]),
            None => prop_assert!(conv2d_transpose(&x, &wt, None, stride, pad, op).is_err()),
        }
    }

    #[test]
    fn accuracy_equals_weighted_sensitivity(counts in prop::array::uniform3(prop::array::uniform3(0u64..50))) {
        let cm = ConfusionMatrix::new(counts);
        if (0..3).all(|c| cm.row_sum(c) > 0) {
            let acc = cm.accuracy().unwrap();
            let ws = cm.weighted_aggregate(Metric::Sensitivity).unwrap();
            prop_assert!((acc - ws).abs() < 1e-12);
        }
    }
}
