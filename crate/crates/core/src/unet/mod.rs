//! Slice-wise 2-D U-Net: topology, checkpoints, training and volume
//! segmentation.

mod checkpoint;
mod model;
mod segment;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use model::{ConvBnRelu, DoubleConv, ForwardCache, UNet, UNetConfig};
pub use segment::{argmax_labels, pad_reflect, segment_volume};
pub use train::{class_weights, mean_foreground_dice, train, SliceSet, TrainConfig, TrainOutcome, TrainRecord};

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::manifest::{AugmentedManifest, EntryKind};

pub fn build_unet(cfg: UNetConfig, seed: u64) -> Result<UNet> {
    UNet::new(cfg, seed)
}

/// Leave-one-out split of an augmented manifest around one original atlas.
#[derive(Clone, Debug, PartialEq)]
pub struct LooSplit {
    pub train: AugmentedManifest,
    /// The held-out atlas pair only.
    pub validation: AugmentedManifest,
    /// Entries derived from the held-out atlas, dropped from both sets.
    pub removed: AugmentedManifest,
}

/// Holds out `atlas_id` for validation and drops every entry whose lineage
/// reaches it, including weak labels propagated from it.
pub fn loo_exclude(manifest: &AugmentedManifest, atlas_id: &str) -> Result<LooSplit> {
    match manifest.entry(atlas_id) {
        Some(e) if e.kind == EntryKind::Strong && e.parent.is_none() => {}
        _ => return Err(Error::UnknownId(atlas_id.to_string())),
    }
    let mut split = LooSplit {
        train: AugmentedManifest::default(),
        validation: AugmentedManifest::default(),
        removed: AugmentedManifest::default(),
    };
    for e in &manifest.entries {
        if e.id == atlas_id {
            split.validation.entries.push(e.clone());
        } else if manifest.lineage(&e.id)?.contains(atlas_id) {
            split.removed.entries.push(e.clone());
        } else {
            split.train.entries.push(e.clone());
        }
    }
    Ok(split)
}

/// Ids of every entry in `manifest` whose lineage touches any of `subjects`.
pub fn entries_touching(manifest: &AugmentedManifest, subjects: &BTreeSet<String>) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for e in &manifest.entries {
        if manifest.lineage(&e.id)?.iter().any(|s| subjects.contains(s)) {
            out.push(e.id.clone());
        }
    }
    Ok(out)
}
