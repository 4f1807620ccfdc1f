use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::segment::{pad_reflect, padded_size};
use super::{segment_volume, UNet, UNetConfig};
use crate::error::{Error, Result};
use crate::metrics::dice;
use crate::neural::{adam_step, softmax_ce, AdamConfig, AdamState, Mode, Tensor4};
use crate::phantom::derive_seed;
use crate::volume::{LabelVolume, Volume};
use crate::{MAX_LABEL, NUM_CLASSES};

/// Training hyperparameters; field names match the CLI config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub dropout: f64,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Exponent applied to inverse class frequencies for the loss weights.
    #[serde(default = "default_weight_power")]
    pub class_weight_power: f64,
}

fn default_weight_power() -> f64 {
    0.25
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            base_channels: 8,
            dropout: 0.2,
            lr: 2e-3,
            batch: 8,
            epochs: 20,
            seed: 0,
            class_weight_power: default_weight_power(),
        }
    }
}

impl TrainConfig {
    pub fn unet_config(&self) -> UNetConfig {
        UNetConfig {
            depth: self.depth,
            base_channels: self.base_channels,
            num_classes: NUM_CLASSES,
            dropout_rate: self.dropout,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Mean validation Dice of labels 1..=4; empty without validation data.
    pub val_dice_per_label: Vec<f64>,
    pub wall_time_s: f64,
}

impl TrainRecord {
    pub fn mean_val_dice(&self) -> Option<f64> {
        (!self.val_dice_per_label.is_empty())
            .then(|| self.val_dice_per_label.iter().sum::<f64>() / self.val_dice_per_label.len() as f64)
    }
}

pub struct TrainOutcome {
    /// Network of the epoch with the best mean validation Dice (the last
    /// epoch when there is no validation data).
    pub best: UNet,
    pub best_epoch: usize,
    pub records: Vec<TrainRecord>,
}

/// Normalized, padded axial slices with their labels, all of one size.
pub struct SliceSet {
    pub height: usize,
    pub width: usize,
    pub images: Vec<Vec<f32>>,
    pub labels: Vec<Vec<u8>>,
}

impl SliceSet {
    pub fn from_volumes(pairs: &[(Volume, LabelVolume)], divisor: usize) -> Result<Self> {
        let first = pairs.first().ok_or_else(|| Error::Training("empty training split".into()))?;
        let [nx, ny, _] = first.0.dims();
        let (height, width) = (padded_size(ny, divisor), padded_size(nx, divisor));
        let mut set = SliceSet {
            height,
            width,
            images: Vec::new(),
            labels: Vec::new(),
        };
        for (img, lab) in pairs {
            img.geom().check_same(lab.geom())?;
            let [x, y, z] = img.dims();
            if [x, y] != [nx, ny] {
                return Err(Error::Shape(format!("slice size {x}×{y} differs from {nx}×{ny}")));
            }
            let norm = img.normalized();
            let plane = x * y;
            for k in 0..z {
                set.images.push(pad_reflect(&norm.data()[k * plane..(k + 1) * plane], ny, nx, height, width)?);
                set.labels.push(pad_reflect(&lab.data()[k * plane..(k + 1) * plane], ny, nx, height, width)?);
            }
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Loss weights `∝ frequency^-power`, scaled so the expected weight of a
/// pixel is 1. Absent classes get weight 1.
pub fn class_weights(labels: &[Vec<u8>], power: f64) -> Vec<f64> {
    let mut counts = [0usize; NUM_CLASSES];
    for plane in labels {
        for &l in plane {
            counts[l as usize] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / total.max(1) as f64).collect();
    let raw: Vec<f64> = freq.iter().map(|&f| if f > 0.0 { f.powf(-power) } else { 0.0 }).collect();
    let expected: f64 = freq.iter().zip(&raw).map(|(f, w)| f * w).sum();
    raw.iter()
        .map(|&w| if w > 0.0 { w / expected } else { 1.0 })
        .collect()
}

/// Per-label Dice (labels 1..=4) of the network's segmentations, averaged
/// over the given volumes.
pub fn mean_foreground_dice(net: &UNet, pairs: &[(Volume, LabelVolume)]) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; MAX_LABEL as usize];
    for (img, truth) in pairs {
        let (seg, _) = segment_volume(net, img)?;
        for l in 1..=MAX_LABEL {
            acc[l as usize - 1] += dice(&seg, truth, l)?;
        }
    }
    Ok(acc.iter().map(|v| v / pairs.len() as f64).collect())
}

/// Trains with Adam on shuffled mini-batches of axial slices and keeps the
/// epoch with the best mean validation Dice.
pub fn train(mut net: UNet, train_set: &SliceSet, val: &[(Volume, LabelVolume)], cfg: &TrainConfig) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::Training("empty training split".into()));
    }
    if cfg.batch == 0 || cfg.epochs == 0 {
        return Err(Error::Domain("batch and epochs must be positive".into()));
    }
    let weights = class_weights(&train_set.labels, cfg.class_weight_power);
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut state = AdamState::default();
    let (h, w) = (train_set.height, train_set.width);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, UNet)> = None;
    let start = Instant::now();
    let mut step = 0u64;
    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch as u64));
        order.shuffle(&mut rng);
        let (mut loss_sum, mut pixels) = (0.0f64, 0usize);
        for batch in order.chunks(cfg.batch) {
            let mut x = Vec::with_capacity(batch.len() * h * w);
            let mut t = Vec::with_capacity(batch.len() * h * w);
            for &i in batch {
                x.extend_from_slice(&train_set.images[i]);
                t.extend_from_slice(&train_set.labels[i]);
            }
            let x = Tensor4::from_vec([batch.len(), 1, h, w], x)?;
            net.zero_grad();
            let (logits, cache) = net.forward(&x, Mode::Train, derive_seed(cfg.seed ^ 0x5eed, step))?;
            let ce = softmax_ce(&logits, &t, &weights)?;
            if !ce.loss.is_finite() {
                let diag = serde_json::to_string(&records).unwrap_or_default();
                return Err(Error::Training(format!("non-finite loss at epoch {epoch} step {step}; records so far: {diag}")));
            }
            net.backward(&cache, &ce.grad)?;
            adam_step(&mut net.params_mut(), &mut state, &adam)?;
            loss_sum += ce.loss * t.len() as f64;
            pixels += t.len();
            step += 1;
        }
        let val_dice = if val.is_empty() { Vec::new() } else { mean_foreground_dice(&net, val)? };
        let record = TrainRecord {
            epoch,
            train_loss: loss_sum / pixels as f64,
            val_dice_per_label: val_dice,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        log::debug!("epoch {epoch}: loss {:.5} val dice {:?}", record.train_loss, record.mean_val_dice());
        let score = record.mean_val_dice().unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().map_or(true, |(s, _, _)| score > *s || val.is_empty()) {
            best = Some((score, epoch, net.clone()));
        }
        records.push(record);
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome { best, best_epoch, records })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_balance_expected_value() {
        let labels = vec![vec![0, 0, 0, 1]];
        let w = class_weights(&labels, 1.0);
        assert!((0.75 * w[0] + 0.25 * w[1] - 1.0).abs() < 1e-12);
        assert!((w[1] / w[0] - 3.0).abs() < 1e-12);
        assert_eq!(w[4], 1.0);
    }
}
