//! Corrective learning on systematically eroded segmentations.

use quadseg::cl::{apply_cl, train_cl, working_roi, ClCase, ClParams};
use quadseg::metrics::dice;
use quadseg::phantom::{derive_seed, generate_phantom, preset};
use quadseg::{LabelVolume, Volume};

/// Each head loses every voxel with a 6-neighbour outside that head.
pub fn erode_heads(l: &LabelVolume) -> LabelVolume {
    let [nx, ny, nz] = l.dims();
    LabelVolume::from_fn(l.geom().clone(), |x, y, z| {
        let v = l.get(x, y, z);
        if v == 0 {
            return 0;
        }
        let same = |dx: i64, dy: i64, dz: i64| {
            let (a, b, c) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
            a < 0 || b < 0 || c < 0 || a >= nx as i64 || b >= ny as i64 || c >= nz as i64 || l.get(a as usize, b as usize, c as usize) == v
        };
        let interior = same(1, 0, 0) && same(-1, 0, 0) && same(0, 1, 0) && same(0, -1, 0) && same(0, 0, 1) && same(0, 0, -1);
        if interior { v } else { 0 }
    })
    .unwrap()
}

pub fn case(name: &str, seed: u64) -> (Volume, LabelVolume) {
    let p = preset(name).unwrap().jittered(0.04, seed);
    generate_phantom(&p, [64, 64, 32], [3.0, 3.0, 6.0]).unwrap()
}

pub fn mean_dice(a: &LabelVolume, b: &LabelVolume) -> f64 {
    (1..=4).map(|k| dice(a, b, k).unwrap()).sum::<f64>() / 4.0
}

/// Mean foreground Dice gain of correcting an eroded held-out case with a
/// model trained on three eroded cases.
pub fn erosion_gain(held_out: &str) -> (f64, f64) {
    let train: Vec<(Volume, LabelVolume, LabelVolume)> = ["young_male", "elder_male", "female"]
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let (v, l) = case(n, derive_seed(11, i as u64));
            let e = erode_heads(&l);
            (v, l, e)
        })
        .collect();
    let cases: Vec<ClCase> = train
        .iter()
        .map(|(v, l, e)| ClCase { image: v, auto: e, probs: None, truth: l })
        .collect();
    let model = train_cl(&cases, &ClParams::default()).unwrap();
    let (v, l) = case(held_out, derive_seed(99, 0));
    let eroded = erode_heads(&l);
    let corrected = apply_cl(&model, &v, &eroded, None).unwrap();
    let outside = working_roi(&eroded, model.roi_radius);
    assert!(outside
        .iter()
        .enumerate()
        .all(|(i, &inside)| inside || corrected.data()[i] == eroded.data()[i]));
    (mean_dice(&eroded, &l), mean_dice(&corrected, &l))
}

