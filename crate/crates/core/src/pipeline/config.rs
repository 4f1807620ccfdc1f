use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cl::ClParams;
use crate::deform::{AugmentParams, RegistrationParams};
use crate::error::{Error, Result};
use crate::jlf::JlfParams;
use crate::manifest::read_json;
use crate::metrics::MetricMode;
use crate::phantom::{derive_seed, CohortSpec};
use crate::unet::TrainConfig;

/// Test cases reported together in one column of the comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestGroup {
    pub name: String,
    pub cases: Vec<String>,
    pub mode: MetricMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Root of every artifact the pipeline writes.
    pub workspace: PathBuf,
    /// Global seed; each stage seed is derived from it.
    pub seed: u64,
    pub cohort: CohortSpec,
    /// Labeled subjects held out for testing. Never used for training.
    pub test_subjects: Vec<String>,
    /// Atlases held out one at a time by `loo-train`; also the JLF atlases.
    pub loo_atlases: Vec<String>,
    pub groups: Vec<TestGroup>,
    pub augment: AugmentParams,
    pub unet: TrainConfig,
    pub cl: ClParams,
    pub jlf: JlfParams,
    /// Registration used to warp JLF atlases onto a target.
    pub registration: RegistrationParams,
    /// Case timed by `bench`.
    pub bench_case: String,
    /// Write PGM previews of the middle slice next to segmentations.
    pub previews: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        let mut cfg = Self {
            workspace: PathBuf::from("quadseg-work"),
            seed: 0,
            cohort: CohortSpec {
                n_labeled: 7,
                n_unlabeled: 4,
                atlas_presets: s(&[
                    "young_male",
                    "young_male",
                    "young_male",
                    "young_male",
                    "elder_male",
                    "young_male",
                    "female",
                ]),
                unlabeled_presets: s(&["female", "elder_male", "young_male", "female"]),
                left_test_presets: s(&["young_male", "young_male", "elder_male"]),
                dims: [64, 64, 32],
                spacing: [3.0, 3.0, 6.0],
                jitter: 0.04,
                seed: 0,
            },
            test_subjects: s(&["atlas5", "atlas6"]),
            loo_atlases: s(&["atlas0", "atlas1", "atlas2", "atlas3", "atlas4"]),
            groups: vec![
                TestGroup {
                    name: "Female".into(),
                    cases: s(&["atlas6"]),
                    mode: MetricMode::Volume3d,
                },
                TestGroup {
                    name: "Male".into(),
                    cases: s(&["atlas5"]),
                    mode: MetricMode::Volume3d,
                },
                TestGroup {
                    name: "Left".into(),
                    cases: s(&["left0", "left1", "left2"]),
                    mode: MetricMode::Slicewise2d,
                },
            ],
            augment: AugmentParams {
                n_random: 1,
                ..AugmentParams::default()
            },
            unet: TrainConfig::default(),
            cl: ClParams::default(),
            jlf: JlfParams::default(),
            registration: RegistrationParams::default(),
            bench_case: "atlas6".into(),
            previews: true,
        };
        cfg.derive_stage_seeds();
        cfg
    }
}

impl PipelineConfig {
    /// Reads a JSON config; absent fields take their defaults.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::Usage(format!("config file {} not found", path.display())));
        }
        let mut cfg: PipelineConfig = read_json(path)?;
        cfg.derive_stage_seeds();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.derive_stage_seeds();
        self
    }

    pub fn derive_stage_seeds(&mut self) {
        self.cohort.seed = derive_seed(self.seed, 1);
        self.augment.seed = derive_seed(self.seed, 2);
        self.unet.seed = derive_seed(self.seed, 3);
        self.cl.seed = derive_seed(self.seed, 4);
    }

    /// Every case named by a test group.
    pub fn test_cases(&self) -> Vec<String> {
        self.groups.iter().flat_map(|g| g.cases.iter().cloned()).collect()
    }

    /// Subjects that must stay out of every training artifact.
    pub fn held_out(&self) -> std::collections::BTreeSet<String> {
        self.test_subjects.iter().cloned().chain(self.test_cases()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let held_out = self.held_out();
        if let Some(a) = self.loo_atlases.iter().find(|a| held_out.contains(*a)) {
            return Err(Error::Usage(format!("`{a}` is both a test subject and a training atlas")));
        }
        if self.loo_atlases.len() < 2 {
            return Err(Error::Usage(format!("need at least 2 training atlases, got {}", self.loo_atlases.len())));
        }
        if self.groups.iter().any(|g| g.cases.is_empty()) {
            return Err(Error::Usage("test group without cases".into()));
        }
        self.jlf.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_cohort_has_seven_atlases_and_three_groups() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.cohort.atlas_presets.len(), 7);
        assert_eq!(cfg.groups.len(), 3);
        assert_eq!(cfg.test_cases().len(), 5);
    }

    #[test]
    fn partial_json_keeps_defaults_and_derives_seeds() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"seed": 9, "unet": {"epochs": 3}}"#).unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.unet.epochs, 3);
        assert_eq!(cfg.unet.batch, TrainConfig::default().batch);
        assert_eq!(cfg.unet.seed, derive_seed(9, 3));
        assert_ne!(cfg.cohort.seed, PipelineConfig::default().cohort.seed);
    }

    #[test]
    fn atlas_listed_as_test_is_rejected() {
        let mut cfg = PipelineConfig::default();
        cfg.loo_atlases.push("atlas6".into());
        assert!(matches!(cfg.validate(), Err(Error::Usage(_))));
    }
}
