//! The full stage chain on a tiny cohort: artifact layout, table shape,
//! isolation audit and reproducibility.

use std::path::Path;

use quadseg::cl::ClParams;
use quadseg::metrics::MetricMode;
use quadseg::phantom::CohortSpec;
use quadseg::pipeline::{cmd_audit, cmd_segment, run_pipeline, Layout, PipelineConfig, TestGroup, METHODS};
use quadseg::unet::TrainConfig;
use quadseg::Error;

fn tiny(workspace: &Path) -> PipelineConfig {
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    PipelineConfig {
        workspace: workspace.to_path_buf(),
        cohort: CohortSpec {
            n_labeled: 4,
            n_unlabeled: 1,
            atlas_presets: s(&["young_male", "young_male", "elder_male", "female"]),
            unlabeled_presets: s(&["female"]),
            left_test_presets: s(&["young_male"]),
            dims: [32, 32, 16],
            spacing: [7.0, 7.0, 12.0],
            jitter: 0.04,
            seed: 0,
        },
        test_subjects: s(&["atlas3"]),
        loo_atlases: s(&["atlas0", "atlas1", "atlas2"]),
        groups: vec![
            TestGroup {
                name: "Female".into(),
                cases: s(&["atlas3"]),
                mode: MetricMode::Volume3d,
            },
            TestGroup {
                name: "Left".into(),
                cases: s(&["left0"]),
                mode: MetricMode::Slicewise2d,
            },
        ],
        unet: TrainConfig {
            depth: 2,
            base_channels: 4,
            epochs: 1,
            ..TrainConfig::default()
        },
        cl: ClParams {
            rounds: 4,
            max_samples: 20_000,
            ..ClParams::default()
        },
        bench_case: "atlas3".into(),
        previews: false,
        ..PipelineConfig::default()
    }
    .with_seed(11)
}

#[test]
fn stage_without_inputs_names_its_producer() {
    let dir = tempfile::tempdir().unwrap();
    match cmd_segment(&tiny(dir.path())) {
        Err(Error::MissingArtifact { producer, .. }) => assert!(!producer.is_empty()),
        other => panic!("expected a missing artifact error, got {other:?}"),
    }
}

#[test]
fn tiny_cohort_runs_end_to_end_and_reproduces() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = tiny(a.path());
    let records = run_pipeline(&cfg).unwrap();
    assert!(records.iter().all(|r| r.outputs.iter().all(|o| !Path::new(&o.path).is_absolute())));

    let layout = Layout::new(a.path());
    let csv = std::fs::read_to_string(layout.evaluation_csv()).unwrap();
    // Header, then 5 rows (4 labels + mean) per case and method.
    assert_eq!(csv.lines().count(), 1 + 2 * METHODS.len() * 5);
    for (name, _) in METHODS {
        assert!(csv.lines().any(|l| l.starts_with(&format!("left0,{name},mean,")) && l.ends_with(",slicewise2d")));
    }
    assert!(layout.evaluation_markdown().exists());
    for sub in ["phantom", "augment", "loo-train", "segment", "jlf", "cl-train", "cl-apply", "evaluate"] {
        assert!(a.path().join("records").join(format!("{sub}.json")).exists(), "no record for {sub}");
    }

    let report = cmd_audit(&cfg).unwrap();
    assert!(report.is_clean());
    assert_eq!(report.loo_checked.len(), 3);

    run_pipeline(&tiny(b.path())).unwrap();
    let again = std::fs::read_to_string(Layout::new(b.path()).evaluation_csv()).unwrap();
    assert_eq!(csv, again);
}
