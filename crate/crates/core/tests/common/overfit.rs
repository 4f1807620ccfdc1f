//! One-slice overfitting of a depth-2 U-Net.

use quadseg::metrics::dice;
use quadseg::phantom::{generate_phantom, preset};
use quadseg::unet::{build_unet, segment_volume, train, SliceSet, TrainConfig, TrainOutcome};
use quadseg::volume::restack;
use quadseg::{LabelVolume, Volume};

pub fn single_slice_volume() -> (Volume, LabelVolume) {
    let (v, l) = generate_phantom(&preset("young_male").unwrap(), [64, 64, 32], [3.0, 3.0, 6.0]).unwrap();
    let v1 = restack(&[v.axial_slice(16)], 6.0, [0.0; 3]).unwrap();
    let l1 = restack(&[l.axial_slice(16)], 6.0, [0.0; 3]).unwrap();
    (v1, l1)
}

pub fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        depth: 2,
        base_channels: 8,
        lr: 1e-2,
        batch: 1,
        epochs,
        seed: 5,
        class_weight_power: 1.0,
        ..TrainConfig::default()
    }
}

/// Per-label Dice (labels 1..=4) on the training slice after `epochs`
/// epochs, with the training records.
pub fn overfit_dice(epochs: usize) -> (Vec<f64>, TrainOutcome) {
    let (v, l) = single_slice_volume();
    let cfg = config(epochs);
    let pairs = vec![(v.clone(), l.clone())];
    let set = SliceSet::from_volumes(&pairs, 2).unwrap();
    let out = train(build_unet(cfg.unet_config(), cfg.seed).unwrap(), &set, &pairs, &cfg).unwrap();
    let (seg, _) = segment_volume(&out.best, &v).unwrap();
    assert_eq!(seg.geom(), v.geom());
    ((1..=4).map(|k| dice(&seg, &l, k).unwrap()).collect(), out)
}
