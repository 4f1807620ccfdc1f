use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{require, Layout};
use crate::error::{Error, Result};
use crate::manifest::{read_json, AugmentedManifest};
use crate::unet::loo_exclude;

/// What a trained artifact was fitted on.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Workspace-relative path of the artifact.
    pub artifact: String,
    /// Augmented-manifest entries used for fitting.
    pub train_entries: Vec<String>,
    /// Augmented-manifest entries used for model selection.
    pub validation_entries: Vec<String>,
    /// Cohort subjects used directly (atlases, corrective-learning cases).
    pub subjects: Vec<String>,
    /// Workspace-relative provenance files of consumed upstream artifacts.
    pub upstream: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub held_out: Vec<String>,
    /// Workspace-relative provenance files that were traced.
    pub artifacts: Vec<String>,
    /// Atlases for which the leave-one-out split was verified.
    pub loo_checked: Vec<String>,
    pub violations: Vec<String>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// The split of `manifest` around `atlas` partitions every entry into
/// train, validation and removed; validation is the atlas alone and no
/// training entry descends from it.
pub fn loo_partition_holds(manifest: &AugmentedManifest, atlas: &str) -> Result<bool> {
    let split = loo_exclude(manifest, atlas)?;
    let ids = |m: &AugmentedManifest| m.entries.iter().map(|e| e.id.clone()).collect::<Vec<_>>();
    let (train, val, removed) = (ids(&split.train), ids(&split.validation), ids(&split.removed));
    let mut all: Vec<String> = train.iter().chain(&val).chain(&removed).cloned().collect();
    let total = all.len();
    all.sort();
    all.dedup();
    let mut expected = ids(manifest);
    expected.sort();
    if all.len() != total || all != expected || val != [atlas] {
        return Ok(false);
    }
    for id in &train {
        if manifest.lineage(id)?.contains(atlas) {
            return Ok(false);
        }
    }
    for id in &removed {
        if !manifest.lineage(id)?.contains(atlas) {
            return Ok(false);
        }
    }
    Ok(true)
}

fn provenance_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if !dir.is_dir() {
        return Ok(());
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            provenance_files(&p, out)?;
        } else if p.to_string_lossy().ends_with(".provenance.json") {
            out.push(p);
        }
    }
    Ok(())
}

/// Every subject an artifact depends on, following upstream artifacts.
fn closure(
    root: &Path,
    file: &Path,
    manifest: &AugmentedManifest,
    visiting: &mut BTreeSet<PathBuf>,
) -> Result<BTreeSet<String>> {
    if !visiting.insert(file.to_path_buf()) {
        return Err(Error::Precondition(format!("provenance cycle through {}", file.display())));
    }
    let p: Provenance = read_json(file)?;
    let mut out = BTreeSet::new();
    for id in p.train_entries.iter().chain(&p.validation_entries) {
        if manifest.entry(id).is_none() {
            return Err(Error::UnknownId(id.clone()));
        }
        out.extend(manifest.lineage(id)?);
    }
    out.extend(p.subjects.iter().cloned());
    for up in &p.upstream {
        out.extend(closure(root, &root.join(up), manifest, visiting)?);
    }
    visiting.remove(file);
    Ok(out)
}

/// Traces every recorded provenance chain in the workspace and every
/// augmented entry back to cohort subjects, and checks that none reaches a
/// held-out subject. Also verifies the leave-one-out split for each atlas.
pub fn audit_isolation(layout: &Layout, held_out: &BTreeSet<String>, loo_atlases: &[String]) -> Result<AuditReport> {
    let manifest_path = layout.augmented_manifest();
    require(&manifest_path, "augment")?;
    let manifest: AugmentedManifest = read_json(&manifest_path)?;
    let mut report = AuditReport {
        held_out: held_out.iter().cloned().collect(),
        ..AuditReport::default()
    };
    for e in &manifest.entries {
        let touched: Vec<String> = manifest.lineage(&e.id)?.intersection(held_out).cloned().collect();
        if !touched.is_empty() {
            report
                .violations
                .push(format!("augmented entry `{}` derives from held-out {touched:?}", e.id));
        }
    }
    let mut files = Vec::new();
    provenance_files(layout.root(), &mut files)?;
    for f in &files {
        let rel = f.strip_prefix(layout.root()).unwrap_or(f).to_string_lossy().into_owned();
        let subjects = closure(layout.root(), f, &manifest, &mut BTreeSet::new())?;
        let touched: Vec<String> = subjects.intersection(held_out).cloned().collect();
        if !touched.is_empty() {
            report.violations.push(format!("{rel} reaches held-out {touched:?}"));
        }
        report.artifacts.push(rel);
    }
    for a in loo_atlases {
        if !loo_partition_holds(&manifest, a)? {
            report.violations.push(format!("leave-one-out split around `{a}` is not a partition"));
        }
        report.loo_checked.push(a.clone());
    }
    Ok(report)
}
