mod common;

use common::deform_checks::{partition_of_unity_error, registration_endpoint_error, zero_field_is_identity};

#[test]
fn weights_partition_unity() {
    assert!(partition_of_unity_error(10_000, 1) < 1e-12);
}

#[test]
fn zero_field_warp_is_bitwise_identity() {
    assert!(zero_field_is_identity());
}

#[test]
fn registration_recovers_synthetic_warp() {
    let (before, after) = registration_endpoint_error(17);
    assert!(before > 1.0, "synthetic warp too small: {before}");
    assert!(after < 1.0, "mean endpoint error {after}");
}

