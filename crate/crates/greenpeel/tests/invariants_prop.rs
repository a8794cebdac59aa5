//! Property tests over randomly generated parameters.

use greenpeel::field::FieldVector;
use greenpeel::grid::Grid;
use greenpeel::sampling::mask;
use greenpeel::schedule::LevelSchedule;
use nalgebra::DVector;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn node_index_roundtrip(d in 1usize..=3, n in 2usize..=9, pick in 0usize..1000) {
        let grid = Grid::new(d, n).unwrap();
        let idx = pick % grid.total_nodes();
        prop_assert_eq!(grid.node_index(grid.multi_index(idx)), idx);
        // spacing satisfies h (n+1) = 1 in floating point
        prop_assert!((grid.spacing() * (n as f64 + 1.0) - 1.0).abs() <= f64::EPSILON);
    }

    #[test]
    fn masking_is_a_projection(values in prop::collection::vec(-10.0f64..10.0, 1..40),
                               picks in prop::collection::vec(0usize..40, 0..40)) {
        let len = values.len();
        let support: Vec<usize> = picks.into_iter().map(|p| p % len).collect();
        let f = FieldVector::forcing(DVector::from_vec(values));
        let once = mask(&f, &support);
        let twice = mask(&once, &support);
        prop_assert_eq!(&once.values, &twice.values);
        // zero off support
        for i in 0..len {
            if !support.contains(&i) {
                prop_assert_eq!(once.values[i], 0.0);
            }
        }
    }

    #[test]
    fn schedule_is_increasing_and_bounded(eps in 1e-8f64..0.5, l_min in 2usize..4, extra in 0usize..6) {
        let l_max = l_min + extra;
        let s = LevelSchedule::geometric(eps, l_min, l_max).unwrap();
        let t = s.tolerances();
        for pair in t.windows(2) {
            prop_assert!(pair[0] < pair[1]);
        }
        prop_assert!((t.last().unwrap() - eps).abs() <= 1e-18 * eps.max(1.0));
        prop_assert!(t.iter().sum::<f64>() <= 2.0 * eps * (1.0 + 1e-12));
    }
}
