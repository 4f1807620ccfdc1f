mod common;

use common::gradcheck::{layer_suite, network_suite, softmax_sum_deviation, CASES};

#[test]
fn every_layer_matches_central_differences() {
    for (layer, errs) in layer_suite(2024) {
        assert!(errs.len() >= CASES, "{layer}: {} cases", errs.len());
        let worst = errs.iter().cloned().fold(0.0, f64::max);
        assert!(worst < 1e-4, "{layer}: worst relative error {worst:e}");
    }
}

#[test]
fn whole_network_matches_central_differences() {
    let worst = network_suite(7, 3).into_iter().fold(0.0, f64::max);
    assert!(worst < 1e-4, "U-Net worst relative error {worst:e}");
}

#[test]
fn softmax_rows_sum_to_one() {
    assert!(softmax_sum_deviation(11) < 1e-6);
}
