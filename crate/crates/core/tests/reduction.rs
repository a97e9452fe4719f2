mod common;

use proptest::prelude::*;
use shmssl::reduction::{bin_index, ierfh, TimeSeriesSegment, IERFH_BINS};

#[test]
fn invariants_over_a_thousand_segments() {
    let r = common::ierfh_invariants(1000);
    assert!(r.all_len_512 && r.all_in_unit);
    assert!(r.max_sum_error < 1e-12, "{:e}", r.max_sum_error);
    assert!(r.permutation_invariant && r.duplication_invariant && r.point_mass_ok);
}

#[test]
fn out_of_range_values_land_in_the_edge_bins() {
    let g = ierfh(&TimeSeriesSegment::new(vec![-5.0, 5.0], 1.0, -1.0, 1.0).unwrap()).unwrap().values;
    assert_eq!((g[0], g[IERFH_BINS - 1]), (0.5, 0.5));
}

proptest! {
    #[test]
    fn bin_index_is_monotone(a in -2.0..2.0f64, b in -2.0..2.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(bin_index(lo, -1.0, 1.0) <= bin_index(hi, -1.0, 1.0));
        prop_assert!(bin_index(hi, -1.0, 1.0) < IERFH_BINS);
    }
}
