use std::path::Path;

use serde::{Deserialize, Serialize};

use super::random::{random_field, FOLD_FREE_FRACTION};
use super::register::{register, RegistrationParams};
use super::warp::{apply_warp, Interp};
use crate::error::{Error, Result};
use crate::manifest::{write_json, AugEntry, AugmentedManifest, EntryKind};
use crate::phantom::derive_seed;
use crate::volume::{save_qvol, LabelVolume, Volume};

/// An in-memory subject: atlases carry labels, unlabeled targets do not.
#[derive(Clone, Debug)]
pub struct Subject {
    pub id: String,
    pub image: Volume,
    pub labels: Option<LabelVolume>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentParams {
    /// Random-warp copies per strong or weak pair.
    pub n_random: usize,
    /// Control spacing of the random warps (mm).
    pub grid_spacing: [f64; 3],
    /// Warp amplitude (mm); defaults to the fold-free bound.
    #[serde(default)]
    pub max_disp: Option<f64>,
    pub registration: RegistrationParams,
    pub seed: u64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            n_random: 3,
            grid_spacing: [48.0, 48.0, 48.0],
            max_disp: None,
            registration: RegistrationParams::default(),
            seed: 0,
        }
    }
}

impl AugmentParams {
    pub fn amplitude(&self) -> f64 {
        self.max_disp
            .unwrap_or(FOLD_FREE_FRACTION * self.grid_spacing.iter().cloned().fold(f64::INFINITY, f64::min))
    }
}

/// Weak labels for `target`: registers the atlas image onto the target and
/// carries the atlas labels along with nearest-neighbour sampling.
pub fn propagate_labels(
    atlas_image: &Volume,
    atlas_labels: &LabelVolume,
    target: &Volume,
    params: &RegistrationParams,
) -> Result<LabelVolume> {
    atlas_image.geom().check_same(atlas_labels.geom())?;
    let reg = register(target, atlas_image, params)?;
    apply_warp(atlas_labels, &reg.field, Interp::Nearest)
}

fn write_pair(out_dir: &Path, id: &str, image: &Volume, labels: &LabelVolume) -> Result<(String, String)> {
    let image_rel = format!("{id}.qvol");
    let labels_rel = format!("{id}_labels.qvol");
    save_qvol(out_dir.join(&image_rel), image)?;
    save_qvol(out_dir.join(&labels_rel), labels)?;
    Ok((image_rel, labels_rel))
}

/// Builds the training set: the atlases (strong), one registration-propagated
/// pair per unlabeled target (weak, atlases taken in turn), and `n_random`
/// random-warp copies of every strong and weak pair. Volumes and
/// `augmented.json` go to `out_dir`.
pub fn augment_dataset(
    atlases: &[Subject],
    unlabeled: &[Subject],
    params: &AugmentParams,
    out_dir: &Path,
) -> Result<AugmentedManifest> {
    if atlases.is_empty() {
        return Err(Error::Precondition("augmentation needs at least one atlas".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut manifest = AugmentedManifest::default();
    // (entry index, image, labels) of pairs that receive random copies.
    let mut pairs: Vec<(usize, Volume, LabelVolume)> = Vec::new();

    for a in atlases {
        let labels = a
            .labels
            .as_ref()
            .ok_or_else(|| Error::Precondition(format!("atlas `{}` has no labels", a.id)))?;
        let (image, labels_rel) = write_pair(out_dir, &a.id, &a.image, labels)?;
        manifest.entries.push(AugEntry {
            id: a.id.clone(),
            image,
            labels: labels_rel,
            kind: EntryKind::Strong,
            parent: None,
            seed: 0,
            source_atlas: None,
        });
        pairs.push((manifest.entries.len() - 1, a.image.clone(), labels.clone()));
    }

    // Sources rotate through the atlases so every atlas seeds weak labels.
    for (i, u) in unlabeled.iter().enumerate() {
        let src = &atlases[i % atlases.len()];
        let weak = propagate_labels(&src.image, src.labels.as_ref().unwrap(), &u.image, &params.registration)?;
        let id = format!("{}_weak", u.id);
        let (image, labels_rel) = write_pair(out_dir, &id, &u.image, &weak)?;
        manifest.entries.push(AugEntry {
            id,
            image,
            labels: labels_rel,
            kind: EntryKind::Weak,
            parent: Some(u.id.clone()),
            seed: 0,
            source_atlas: Some(src.id.clone()),
        });
        pairs.push((manifest.entries.len() - 1, u.image.clone(), weak));
    }

    let amplitude = params.amplitude();
    let mut counter = 0u64;
    for (entry, image, labels) in &pairs {
        let parent = manifest.entries[*entry].id.clone();
        for r in 0..params.n_random {
            let seed = derive_seed(params.seed, counter);
            counter += 1;
            let field = random_field(image.geom(), params.grid_spacing, amplitude, seed)?;
            let wi = apply_warp(image, &field, Interp::Linear)?;
            let wl = apply_warp(labels, &field, Interp::Nearest)?;
            let id = format!("{parent}_w{r}");
            let (image_rel, labels_rel) = write_pair(out_dir, &id, &wi, &wl)?;
            manifest.entries.push(AugEntry {
                id,
                image: image_rel,
                labels: labels_rel,
                kind: EntryKind::Warped,
                parent: Some(parent.clone()),
                seed,
                source_atlas: None,
            });
        }
    }
    write_json(out_dir.join("augmented.json"), &manifest)?;
    Ok(manifest)
}
