//! Orchestration of the full framework: cohort generation, augmentation,
//! U-Net training (leave-one-out and complete), segmentation, joint label
//! fusion, corrective learning and evaluation. Each stage reads its inputs
//! from and writes its artifacts to one workspace directory, plus a JSON run
//! record with content hashes.

mod audit;
mod bench;
mod config;
mod record;
mod stages;

pub use audit::{audit_isolation, loo_partition_holds, AuditReport, Provenance};
pub use bench::{cmd_bench, BenchReport};
pub use config::{PipelineConfig, TestGroup};
pub use record::{require, sha256_bytes, sha256_file, ArtifactHash, Recorder, RunRecord};
pub use stages::{
    cmd_audit, cmd_augment, cmd_cl_apply, cmd_cl_train, cmd_evaluate, cmd_jlf, cmd_loo_train, cmd_phantom, cmd_segment,
    cmd_train, run_pipeline, METHODS,
};

use std::path::{Path, PathBuf};

/// Where each artifact lives inside the workspace.
#[derive(Clone, Debug)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn cohort_dir(&self) -> PathBuf {
        self.root.join("cohort")
    }

    pub fn cohort_manifest(&self) -> PathBuf {
        self.cohort_dir().join("manifest.json")
    }

    pub fn augmented_dir(&self) -> PathBuf {
        self.root.join("augmented")
    }

    pub fn augmented_manifest(&self) -> PathBuf {
        self.augmented_dir().join("augmented.json")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn complete_model(&self) -> PathBuf {
        self.models_dir().join("complete.qnet")
    }

    pub fn loo_model(&self, atlas: &str) -> PathBuf {
        self.models_dir().join(format!("loo_{atlas}.qnet"))
    }

    /// Segmentation of a held-out atlas by its leave-one-out model.
    pub fn loo_segmentation(&self, atlas: &str) -> PathBuf {
        self.root.join("loo").join(format!("{atlas}_unet.qvol"))
    }

    pub fn loo_probs(&self, atlas: &str) -> PathBuf {
        self.root.join("loo").join(format!("{atlas}_unet_probs"))
    }

    /// Test-case segmentation; `method` is one of `unet`, `unet_cl`, `jlf`, `jlf_cl`.
    pub fn segmentation(&self, case: &str, method: &str) -> PathBuf {
        self.root.join("segmentations").join(format!("{case}_{method}.qvol"))
    }

    pub fn unet_probs(&self, case: &str) -> PathBuf {
        self.root.join("segmentations").join(format!("{case}_unet_probs"))
    }

    /// JLF of a training atlas from the remaining atlases.
    pub fn jlf_training_case(&self, atlas: &str) -> PathBuf {
        self.root.join("jlf").join(format!("train_{atlas}_jlf.qvol"))
    }

    pub fn jlf_atlas_set(&self) -> PathBuf {
        self.root.join("jlf").join("atlases.json")
    }

    pub fn cl_model(&self, method: &str) -> PathBuf {
        self.root.join("cl").join(format!("{method}_cl.json"))
    }

    pub fn evaluation_csv(&self) -> PathBuf {
        self.root.join("evaluation").join("evaluation.csv")
    }

    pub fn evaluation_markdown(&self) -> PathBuf {
        self.root.join("evaluation").join("evaluation.md")
    }

    pub fn audit_report(&self) -> PathBuf {
        self.root.join("evaluation").join("audit.json")
    }

    pub fn bench_report(&self) -> PathBuf {
        self.root.join("bench").join("bench.json")
    }

    pub fn previews_dir(&self) -> PathBuf {
        self.root.join("previews")
    }
}

/// Sidecar holding the provenance of `artifact`.
pub fn provenance_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".provenance.json");
    artifact.with_file_name(name)
}
