//! Invariants over random inputs.

use cryocare_core::baselines::median_filter;
use cryocare_core::downstream::{connected_components, otsu_mask, BinaryMask, Connectivity};
use cryocare_core::metrics::{fsc, mse};
use cryocare_core::ScalarField;
use proptest::prelude::*;

fn field(shape: Vec<usize>) -> impl Strategy<Value = ScalarField> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-100.0f32..100.0, n).prop_map(move |d| ScalarField::new(shape.clone(), d).unwrap())
}

fn volume() -> impl Strategy<Value = ScalarField> {
    (1usize..6, 1usize..6, 1usize..6).prop_flat_map(|(z, y, x)| field(vec![z, y, x]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn median_stays_within_the_input_range(f in volume(), r in 0usize..3) {
        let (lo, hi) = f.min_max();
        let m = median_filter(&f, &[r, r, r]).unwrap();
        prop_assert!(m.data().iter().all(|&v| v >= lo && v <= hi));
    }

    #[test]
    fn components_partition_the_mask(bits in prop::collection::vec(any::<bool>(), 125)) {
        let m = BinaryMask::new([5, 5, 5], bits).unwrap();
        let mut last = usize::MAX;
        for conn in [Connectivity::Faces6, Connectivity::Edges18, Connectivity::Corners26] {
            let c = connected_components(&m, conn);
            prop_assert_eq!(c.counts.iter().sum::<usize>(), m.count());
            prop_assert!(c.counts.iter().all(|&n| n > 0));
            // more neighbors can only merge components
            prop_assert!(c.counts.len() <= last);
            last = c.counts.len();
        }
    }

    #[test]
    fn otsu_ignores_power_of_two_scaling(f in field(vec![8, 8]), k in -3i32..4) {
        let (lo, hi) = f.min_max();
        prop_assume!(hi > lo);
        // scaling by 2^k commutes with rounding, so the normalized field is identical
        let g = f.map(|v| v * 2f32.powi(k)).unwrap();
        prop_assert_eq!(otsu_mask(&f).unwrap(), otsu_mask(&g).unwrap());
    }

    #[test]
    fn fsc_is_symmetric(a in field(vec![4, 4, 4]), b in field(vec![4, 4, 4])) {
        prop_assume!(a.data().iter().any(|&v| v != 0.0) && b.data().iter().any(|&v| v != 0.0));
        prop_assert_eq!(fsc(&a, &b, 1.0).unwrap(), fsc(&b, &a, 1.0).unwrap());
    }

    #[test]
    fn mse_is_symmetric_and_zero_on_itself(a in volume()) {
        let b = a.map(|v| v * 0.5 + 1.0).unwrap();
        prop_assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
        prop_assert_eq!(mse(&a, &a).unwrap(), 0.0);
    }
}
