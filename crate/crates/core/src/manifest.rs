//! Dataset and augmented-dataset manifests (JSON). File paths are stored
//! relative to the directory containing the manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub id: String,
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<String>,
    pub preset: String,
    pub seed: u64,
    /// Left-thigh case stored mirrored relative to the right-thigh atlases.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub mirrored: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub atlases: Vec<SubjectEntry>,
    pub unlabeled: Vec<SubjectEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub left_tests: Vec<SubjectEntry>,
}

impl DatasetManifest {
    pub fn atlas(&self, id: &str) -> Result<&SubjectEntry> {
        self.atlases
            .iter()
            .find(|a| a.id == id)
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    /// Expert (ground-truth) labels.
    Strong,
    /// Labels propagated by registration.
    Weak,
    /// Random B-spline warp of another entry.
    Warped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugEntry {
    pub id: String,
    pub image: String,
    pub labels: String,
    pub kind: EntryKind,
    /// Entry or subject this one was derived from; `None` for originals.
    pub parent: Option<String>,
    pub seed: u64,
    /// Atlas whose labels were propagated (weak entries only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_atlas: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentedManifest {
    pub entries: Vec<AugEntry>,
}

impl AugmentedManifest {
    pub fn entry(&self, id: &str) -> Option<&AugEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Follows parent links to the original atlas or unlabeled subject.
    pub fn root_of(&self, id: &str) -> Result<String> {
        let by_id: BTreeMap<&str, &AugEntry> = self.entries.iter().map(|e| (e.id.as_str(), e)).collect();
        let mut cur = id.to_string();
        let mut seen = BTreeSet::new();
        loop {
            if !seen.insert(cur.clone()) {
                return Err(Error::Precondition(format!("provenance cycle through `{cur}`")));
            }
            match by_id.get(cur.as_str()) {
                Some(e) => match &e.parent {
                    Some(p) => cur = p.clone(),
                    None => return Ok(cur),
                },
                None if cur != id => return Ok(cur),
                None => return Err(Error::UnknownId(id.to_string())),
            }
        }
    }

    /// Every subject id the entry depends on: its provenance chain plus the
    /// atlas used to propagate weak labels anywhere along that chain.
    pub fn lineage(&self, id: &str) -> Result<BTreeSet<String>> {
        let mut out = BTreeSet::new();
        let mut cur = Some(id.to_string());
        while let Some(c) = cur {
            if !out.insert(c.clone()) {
                return Err(Error::Precondition(format!("provenance cycle through `{c}`")));
            }
            match self.entry(&c) {
                Some(e) => {
                    if let Some(a) = &e.source_atlas {
                        out.insert(a.clone());
                    }
                    cur = e.parent.clone();
                }
                None => cur = None,
            }
        }
        Ok(out)
    }
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Resolves a manifest-relative path.
pub fn resolve(manifest_dir: &Path, rel: &str) -> PathBuf {
    manifest_dir.join(rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, kind: EntryKind, parent: Option<&str>) -> AugEntry {
        AugEntry {
            id: id.into(),
            image: format!("{id}.qvol"),
            labels: format!("{id}_labels.qvol"),
            kind,
            parent: parent.map(Into::into),
            seed: 0,
            source_atlas: None,
        }
    }

    #[test]
    fn roots_follow_parent_chain() {
        let m = AugmentedManifest {
            entries: vec![
                entry("A", EntryKind::Strong, None),
                entry("weak_U", EntryKind::Weak, Some("U")),
                entry("A_w0", EntryKind::Warped, Some("A")),
                entry("weak_U_w0", EntryKind::Warped, Some("weak_U")),
            ],
        };
        assert_eq!(m.root_of("A_w0").unwrap(), "A");
        assert_eq!(m.root_of("weak_U_w0").unwrap(), "U");
        assert_eq!(m.root_of("A").unwrap(), "A");
        assert!(m.root_of("nope").is_err());
    }

    #[test]
    fn enum_serializes_lowercase() {
        let e = entry("A", EntryKind::Strong, None);
        let s = serde_json::to_string(&e).unwrap();
        assert!(s.contains(r#""kind":"strong""#));
        assert!(s.contains(r#""parent":null"#));
    }
}
