mod common;

use std::collections::HashMap;

use common::reference_table as reference;
use flowconf::confidence::{confidence_db_flow, confidence_oa, cycle_terms, occlusion_mask, CycleParams};
use flowconf::losses::{discounted_total, weight_db, weight_oa, SequenceParams};
use flowconf::{BinaryMask, Grid1, Grid2};

const TOL: f64 = 1e-9;

fn check(table: &HashMap<String, f64>, key: &str, got: f64) {
    let want = table[key];
    let err = if want == 0.0 { got.abs() } else { (got - want).abs() / want.abs() };
    assert!(err <= TOL, "{key}: {got} vs {want}");
}

fn px(v: [f64; 2]) -> Grid2 {
    Grid2::filled(1, 1, v).unwrap()
}

/// Forward flow `fw` at the left pixel of a 1x8 row; the backward flow is
/// `bw` everywhere so its sample at the target is exact.
fn cycle_pair(fw: [f64; 2], bw: [f64; 2]) -> (Grid2, Grid2) {
    let f = Grid2::from_fn(1, 8, |_, c| if c == 0 { fw } else { [0.0, 0.0] }).unwrap();
    (f, Grid2::filled(1, 8, bw).unwrap())
}

#[test]
fn error_confidence_matches_reference() {
    let t = reference();
    let one = BinaryMask::all(1, 1).unwrap();
    let db = |p, g| confidence_db_flow(&px(p), &px(g), &one).unwrap().get(0, 0);
    check(&t, "confidence_db_unit_error", db([1.0, 0.0], [0.0, 0.0]));
    check(&t, "confidence_db_error_3_4", db([3.0, 4.0], [0.0, 0.0]));
    check(&t, "confidence_db_error_10", db([0.0, -10.0], [0.0, 0.0]));
}

#[test]
fn cycle_terms_match_reference() {
    let t = reference();
    let params = CycleParams::default();

    let (fw, bw) = cycle_pair([5.0, 0.0], [0.0, 0.0]);
    let terms = cycle_terms(&fw, &bw, &params).unwrap();
    check(&t, "cycle_occluded_numerator", terms.numerator.get(0, 0));
    check(&t, "cycle_occluded_denominator", terms.denominator.get(0, 0));
    let matched = occlusion_mask(&fw, &bw, &params).unwrap().get(0, 0);
    assert_eq!(matched as u8 as f64, t["cycle_occluded_is_matched"]);
    check(&t, "confidence_oa_occluded", confidence_oa(&fw, &bw, &params).unwrap().get(0, 0));

    let (fw, bw) = cycle_pair([2.0, 0.0], [-2.0, 0.0]);
    let terms = cycle_terms(&fw, &bw, &params).unwrap();
    assert_eq!(terms.numerator.get(0, 0), t["cycle_consistent_numerator"]);
    check(&t, "cycle_consistent_denominator", terms.denominator.get(0, 0));
}

#[test]
fn weights_and_sequence_match_reference() {
    let t = reference();
    // Numerator and denominator both exactly 1: the boundary case.
    let params = CycleParams::new(0.0, 1.0).unwrap();
    let (fw, bw) = cycle_pair([1.0, 0.0], [0.0, 0.0]);
    check(&t, "confidence_oa_ratio_one", confidence_oa(&fw, &bw, &params).unwrap().get(0, 0));
    assert!(!occlusion_mask(&fw, &bw, &params).unwrap().get(0, 0));
    let zero = Grid1::filled(1, 1, 0.0).unwrap();
    let full = Grid1::filled(1, 1, 1.0).unwrap();
    check(&t, "weight_db_zero_confidence", weight_db(&zero, 2.0, 0.5).unwrap().get(0, 0));
    check(&t, "weight_oa_full_confidence", weight_oa(&full, 2.0, 1.0).unwrap().get(0, 0));
    check(
        &t,
        "sequence_total_unit_losses",
        discounted_total(&[1.0, 1.0, 1.0], &SequenceParams::default()),
    );
}
