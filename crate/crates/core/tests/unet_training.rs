mod common;

use common::overfit::{config, overfit_dice, single_slice_volume};
use quadseg::unet::{build_unet, train, SliceSet, TrainConfig};

#[test]
fn overfits_one_slice() {
    let (dice, out) = overfit_dice(200);
    for (k, d) in dice.iter().enumerate() {
        assert!(*d >= 0.99, "label {}: Dice {d}", k + 1);
    }
    let first = out.records[0].mean_val_dice().unwrap();
    let best = out.records[out.best_epoch - 1].mean_val_dice().unwrap();
    assert!(best >= first);
    assert!(out.records.windows(2).all(|w| w[0].epoch < w[1].epoch));
}

#[test]
fn same_seed_gives_same_loss_trace() {
    let (v, l) = single_slice_volume();
    let cfg = TrainConfig { batch: 2, ..config(3) };
    let pairs = vec![(v.clone(), l.clone()), (v, l)];
    let set = SliceSet::from_volumes(&pairs, 2).unwrap();
    let run = || {
        let out = train(build_unet(cfg.unet_config(), cfg.seed).unwrap(), &set, &[], &cfg).unwrap();
        out.records.iter().map(|r| r.train_loss).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn empty_training_split_is_an_error() {
    assert!(SliceSet::from_volumes(&[], 2).is_err());
}
