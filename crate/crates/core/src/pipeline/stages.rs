use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{audit_isolation, provenance_path, require, AuditReport, Layout, PipelineConfig, Provenance, Recorder, RunRecord};
use crate::cl::{apply_cl, train_cl, ClCase, ClModel};
use crate::deform::{augment_dataset, Subject};
use crate::error::{Error, Result};
use crate::jlf::{jlf_segment, warp_atlases};
use crate::manifest::{read_json, write_json, AugEntry, AugmentedManifest, DatasetManifest, SubjectEntry};
use crate::metrics::{
    annotated_slices, evaluation_csv, evaluation_markdown, slicewise_metrics, volume_metrics, EvalRow, MetricMode,
};
use crate::phantom::{derive_seed, generate_cohort};
use crate::unet::{load_checkpoint, loo_exclude, save_checkpoint, segment_volume, train, SliceSet, TrainConfig, TrainRecord, UNet};
use crate::volume::{load_intensity, load_labels, load_probs, save_probs, save_qvol, write_label_pgm, write_pgm, LabelVolume, ProbVolume, Volume};
use crate::MAX_LABEL;

/// Table labels paired with segmentation file suffixes.
pub const METHODS: [(&str, &str); 4] = [("U-Net", "unet"), ("U-Net + CL", "unet_cl"), ("JLF", "jlf"), ("JLF + CL", "jlf_cl")];

fn config_bytes(cfg: &PipelineConfig) -> Vec<u8> {
    serde_json::to_vec(cfg).expect("config serializes")
}

fn recorder(cfg: &PipelineConfig, name: &str) -> Recorder {
    Recorder::start(&cfg.workspace, name, cfg.seed, &config_bytes(cfg))
}

fn cohort(layout: &Layout) -> Result<DatasetManifest> {
    let path = layout.cohort_manifest();
    require(&path, "phantom")?;
    read_json(path)
}

fn augmented(layout: &Layout) -> Result<AugmentedManifest> {
    let path = layout.augmented_manifest();
    require(&path, "augment")?;
    read_json(path)
}

fn find_subject<'a>(m: &'a DatasetManifest, id: &str) -> Result<&'a SubjectEntry> {
    m.atlases
        .iter()
        .chain(&m.left_tests)
        .chain(&m.unlabeled)
        .find(|s| s.id == id)
        .ok_or_else(|| Error::UnknownId(id.to_string()))
}

/// A labeled subject in right-thigh orientation.
struct Case {
    image: Volume,
    truth: LabelVolume,
    mirrored: bool,
}

impl Case {
    /// Maps a volume between right-thigh and stored orientation.
    fn orient(&self, v: &LabelVolume) -> LabelVolume {
        if self.mirrored {
            v.mirror_x()
        } else {
            v.clone()
        }
    }

    fn orient_probs(&self, p: &ProbVolume) -> ProbVolume {
        if self.mirrored {
            p.mirror_x()
        } else {
            p.clone()
        }
    }
}

fn load_case(layout: &Layout, m: &DatasetManifest, id: &str, rec: &mut Recorder) -> Result<Case> {
    let s = find_subject(m, id)?;
    let labels = s
        .labels
        .as_ref()
        .ok_or_else(|| Error::Precondition(format!("subject `{id}` has no labels")))?;
    let (ip, lp) = (layout.cohort_dir().join(&s.image), layout.cohort_dir().join(labels));
    require(&ip, "phantom")?;
    require(&lp, "phantom")?;
    rec.input(&ip);
    rec.input(&lp);
    let (mut image, mut truth) = (load_intensity(&ip)?, load_labels(&lp)?);
    if s.mirrored {
        image = image.mirror_x();
        truth = truth.mirror_x();
    }
    Ok(Case {
        image,
        truth,
        mirrored: s.mirrored,
    })
}

fn write_provenance(layout: &Layout, artifact: &Path, mut p: Provenance, rec: &mut Recorder) -> Result<()> {
    p.artifact = rel(layout, artifact);
    let path = provenance_path(artifact);
    write_json(&path, &p)?;
    rec.output(path);
    Ok(())
}

fn rel(layout: &Layout, p: &Path) -> String {
    p.strip_prefix(layout.root()).unwrap_or(p).to_string_lossy().into_owned()
}

fn save_labels(path: &Path, v: &LabelVolume, rec: &mut Recorder) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    save_qvol(path, v)?;
    rec.output(path);
    Ok(())
}

fn preview(cfg: &PipelineConfig, layout: &Layout, name: &str, image: Option<&Volume>, labels: &LabelVolume) -> Result<()> {
    if !cfg.previews {
        return Ok(());
    }
    let dir = layout.previews_dir();
    fs::create_dir_all(&dir)?;
    let z = labels.dims()[2] / 2;
    write_label_pgm(dir.join(format!("{name}_labels.pgm")), &labels.axial_slice(z))?;
    if let Some(img) = image {
        write_pgm(dir.join(format!("{name}_image.pgm")), &img.axial_slice(z))?;
    }
    Ok(())
}

/// Generates the phantom cohort.
pub fn cmd_phantom(cfg: &PipelineConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.workspace);
    let mut rec = recorder(cfg, "phantom");
    let dir = layout.cohort_dir();
    let m = generate_cohort(&cfg.cohort, &dir)?;
    for s in m.atlases.iter().chain(&m.unlabeled).chain(&m.left_tests) {
        rec.output(dir.join(&s.image));
        if let Some(l) = &s.labels {
            rec.output(dir.join(l));
        }
    }
    rec.output(layout.cohort_manifest());
    for id in cfg.held_out() {
        find_subject(&m, &id)?;
    }
    for a in &cfg.loo_atlases {
        if !m.atlases.iter().any(|s| &s.id == a) {
            return Err(Error::UnknownId(a.clone()));
        }
    }
    if let Some(first) = m.atlases.first() {
        let img = load_intensity(dir.join(&first.image))?;
        let lab = load_labels(dir.join(first.labels.as_ref().expect("atlas labels")))?;
        preview(cfg, &layout, &first.id, Some(&img), &lab)?;
    }
    rec.finish()
}

/// Builds the augmented training set from every non-test atlas and the
/// unlabeled subjects.
pub fn cmd_augment(cfg: &PipelineConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.workspace);
    let mut rec = recorder(cfg, "augment");
    let m = cohort(&layout)?;
    let held_out = cfg.held_out();
    let load = |s: &SubjectEntry, rec: &mut Recorder| -> Result<Subject> {
        let ip = layout.cohort_dir().join(&s.image);
        require(&ip, "phantom")?;
        rec.input(&ip);
        let labels = match &s.labels {
            Some(l) => {
                let lp = layout.cohort_dir().join(l);
                rec.input(&lp);
                Some(load_labels(lp)?)
            }
            None => None,
        };
        Ok(Subject {
            id: s.id.clone(),
            image: load_intensity(ip)?,
            labels,
        })
    };
    let mut atlases = Vec::new();
    for s in m.atlases.iter().filter(|s| !held_out.contains(&s.id)) {
        atlases.push(load(s, &mut rec)?);
    }
    let mut unlabeled = Vec::new();
    for s in m.unlabeled.iter().filter(|s| !held_out.contains(&s.id)) {
        unlabeled.push(load(s, &mut rec)?);
    }
    let dir = layout.augmented_dir();
    let aug = augment_dataset(&atlases, &unlabeled, &cfg.augment, &dir)?;
    for e in &aug.entries {
        rec.output(dir.join(&e.image));
        rec.output(dir.join(&e.labels));
    }
    rec.output(layout.augmented_manifest());
    rec.finish()
}

fn load_pairs(layout: &Layout, entries: &[AugEntry], rec: &mut Recorder) -> Result<Vec<(Volume, LabelVolume)>> {
    let dir = layout.augmented_dir();
    entries
        .iter()
        .map(|e| {
            let (ip, lp) = (dir.join(&e.image), dir.join(&e.labels));
            require(&ip, "augment")?;
            require(&lp, "augment")?;
            rec.input(&ip);
            rec.input(&lp);
            Ok((load_intensity(ip)?, load_labels(lp)?))
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct TrainingHistory {
    best_epoch: usize,
    records: Vec<TrainRecord>,
}

struct Job {
    /// `None` for the complete model.
    held_out: Option<String>,
    checkpoint: PathBuf,
    train: Vec<AugEntry>,
    validation: Vec<AugEntry>,
    seed: u64,
}

fn run_job(layout: &Layout, job: &Job, base: &TrainConfig) -> Result<(UNet, Recorder)> {
    let mut rec = Recorder::detached(layout.root());
    let pairs = load_pairs(layout, &job.train, &mut rec)?;
    let val = load_pairs(layout, &job.validation, &mut rec)?;
    let cfg = TrainConfig {
        seed: job.seed,
        ..base.clone()
    };
    let ucfg = cfg.unet_config();
    let set = SliceSet::from_volumes(&pairs, ucfg.divisor())?;
    let net = UNet::new(ucfg, job.seed)?;
    let name = job.held_out.as_deref().unwrap_or("complete");
    log::info!("training `{name}` on {} slices", set.len());
    let outcome = train(net, &set, &val, &cfg)?;
    log::info!(
        "model `{name}`: best epoch {} of {}, final loss {:.4}",
        outcome.best_epoch,
        outcome.records.len(),
        outcome.records.last().map_or(f64::NAN, |r| r.train_loss)
    );
    if let Some(dir) = job.checkpoint.parent() {
        fs::create_dir_all(dir)?;
    }
    save_checkpoint(&job.checkpoint, &outcome.best)?;
    rec.output(&job.checkpoint);
    let history = job.checkpoint.with_extension("history.json");
    write_json(
        &history,
        &TrainingHistory {
            best_epoch: outcome.best_epoch,
            records: outcome.records,
        },
    )?;
    rec.output(history);
    let prov = Provenance {
        train_entries: job.train.iter().map(|e| e.id.clone()).collect(),
        validation_entries: job.validation.iter().map(|e| e.id.clone()).collect(),
        ..Provenance::default()
    };
    write_provenance(layout, &job.checkpoint, prov, &mut rec)?;
    Ok((outcome.best, rec))
}

fn complete_job(layout: &Layout, cfg: &PipelineConfig, aug: &AugmentedManifest) -> Job {
    Job {
        held_out: None,
        checkpoint: layout.complete_model(),
        train: aug.entries.clone(),
        validation: Vec::new(),
        seed: derive_seed(cfg.unet.seed, 0),
    }
}

fn merge(into: &mut Recorder, from: Recorder) {
    let (inputs, outputs) = from.into_paths();
    for p in inputs {
        into.input(p);
    }
    for p in outputs {
        into.output(p);
    }
}

/// Trains the complete U-Net on the whole augmented set.
pub fn cmd_train(cfg: &PipelineConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.workspace);
    let mut rec = recorder(cfg, "train");
    let aug = augmented(&layout)?;
    rec.input(layout.augmented_manifest());
    let (_, job_rec) = run_job(&layout, &complete_job(&layout, cfg, &aug), &cfg.unet)?;
    merge(&mut rec, job_rec);
    rec.finish()
}

/// Trains one U-Net per leave-one-out atlas plus the complete model, and
/// segments every held-out atlas with its model to produce the corrective
/// learning cases.
pub fn cmd_loo_train(cfg: &PipelineConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.workspace);
    let mut rec = recorder(cfg, "loo-train");
    let aug = augmented(&layout)?;
    rec.input(layout.augmented_manifest());
    if cfg.loo_atlases.len() < 2 {
        return Err(Error::Precondition(format!("{} leave-one-out atlases (need >= 2)", cfg.loo_atlases.len())));
    }
    let mut jobs = Vec::new();
    for (i, a) in cfg.loo_atlases.iter().enumerate() {
        let split = loo_exclude(&aug, a)?;
        jobs.push(Job {
            held_out: Some(a.clone()),
            checkpoint: layout.loo_model(a),
            train: split.train.entries,
            validation: split.validation.entries,
            seed: derive_seed(cfg.unet.seed, i as u64 + 1),
        });
    }
    jobs.push(complete_job(&layout, cfg, &aug));
    let results: Vec<Result<(UNet, Recorder)>> = jobs.par_iter().map(|j| run_job(&layout, j, &cfg.unet)).collect();
    let dir = layout.augmented_dir();
    for (job, res) in jobs.iter().zip(results) {
        let (net, job_rec) = res?;
        merge(&mut rec, job_rec);
        let Some(atlas) = &job.held_out else { continue };
        let entry = &job.validation[0];
        let image = load_intensity(dir.join(&entry.image))?;
        let (seg, probs) = segment_volume(&net, &image)?;
        let seg_path = layout.loo_segmentation(atlas);
        save_labels(&seg_path, &seg, &mut rec)?;
        save_probs(layout.loo_probs(atlas), &probs)?;
        write_provenance(
            &layout,
            &seg_path,
            Provenance {
                upstream: vec![rel(&layout, &provenance_path(&job.checkpoint))],
                ..Provenance::default()
            },
            &mut rec,
        )?;
    }
    rec.finish()
}

/// Segments every test case with the complete U-Net.
pub fn cmd_segment(cfg: &PipelineConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.workspace);
    let mut rec = recorder(cfg, "segment");
    let m = cohort(&layout)?;
    let ckpt = layout.complete_model();
    require(&ckpt, "train")?;
    rec.input(&ckpt);
    let net = load_checkpoint(&ckpt)?;
    for id in cfg.test_cases() {
        let case = load_case(&layout, &m, &id, &mut rec)?;
        let start = Instant::now();
        let (seg, probs) = segment_volume(&net, &case.image)?;
        log::info!("segment `{id}`: {:.3} s", start.elapsed().as_secs_f64());
        let path = layout.segmentation(&id, "unet");
        save_labels(&path, &case.orient(&seg), &mut rec)?;
        save_probs(layout.unet_probs(&id), &case.orient_probs(&probs))?;
        preview(cfg, &layout, &format!("{id}_unet"), Some(&case.image), &seg)?;
    }
    rec.finish()
}

fn atlas_pairs(layout: &Layout, m: &DatasetManifest, ids: &[String], rec: &mut Recorder) -> Result<Vec<(Volume, LabelVolume)>> {
    ids.iter()
        .map(|id| {
            let c = load_case(layout, m, id, rec)?;
            Ok((c.image, c.truth))
        })
        .collect()
}

fn fuse(cfg: &PipelineConfig, atlases: &[(Volume, LabelVolume)], target: &Volume) -> Result<LabelVolume> {
    let warped = warp_atlases(atlases, target, &cfg.registration)?;
    let start = Instant::now();
    let (seg, _) = jlf_segment(target, &warped, &cfg.jlf)?;
    log::info!("fusion of {} atlases: {:.3} s", warped.len(), start.elapsed().as_secs_f64());
    Ok(seg)
}

/// Joint label fusion of every test case from the training atlases, and of
/// every training atlas from the others (corrective learning cases).
pub fn cmd_jlf(cfg: &PipelineConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.workspace);
    let mut rec = recorder(cfg, "jlf");
    let m = cohort(&layout)?;
    let atlases = atlas_pairs(&layout, &m, &cfg.loo_atlases, &mut rec)?;
    let set_path = layout.jlf_atlas_set();
    fs::create_dir_all(set_path.parent().expect("jlf dir"))?;
    write_json(&set_path, &cfg.loo_atlases)?;
    rec.output(&set_path);
    write_provenance(
        &layout,
        &set_path,
        Provenance {
            subjects: cfg.loo_atlases.clone(),
            ..Provenance::default()
        },
        &mut rec,
    )?;
    for id in cfg.test_cases() {
        let case = load_case(&layout, &m, &id, &mut rec)?;
        let seg = fuse(cfg, &atlases, &case.image)?;
        save_labels(&layout.segmentation(&id, "jlf"), &case.orient(&seg), &mut rec)?;
        preview(cfg, &layout, &format!("{id}_jlf"), None, &seg)?;
    }
    for (i, id) in cfg.loo_atlases.iter().enumerate() {
        let others: Vec<(Volume, LabelVolume)> = atlases
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, p)| p.clone())
            .collect();
        let seg = fuse(cfg, &others, &atlases[i].0)?;
        save_labels(&layout.jlf_training_case(id), &seg, &mut rec)?;
    }
    rec.finish()
}

/// Trains the two correctors: one on the leave-one-out U-Net segmentations
/// (with class probabilities), one on the leave-one-out JLF segmentations.
pub fn cmd_cl_train(cfg: &PipelineConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.workspace);
    let mut rec = recorder(cfg, "cl-train");
    let m = cohort(&layout)?;
    let atlases = atlas_pairs(&layout, &m, &cfg.loo_atlases, &mut rec)?;
    let mut unet_cases = Vec::new();
    let mut jlf_cases = Vec::new();
    let mut unet_upstream = Vec::new();
    for id in &cfg.loo_atlases {
        let seg = layout.loo_segmentation(id);
        require(&seg, "loo-train")?;
        rec.input(&seg);
        let probs = load_probs(layout.loo_probs(id)).map_err(|_| Error::MissingArtifact {
            path: layout.loo_probs(id),
            producer: "loo-train".into(),
        })?;
        unet_cases.push((load_labels(&seg)?, probs));
        unet_upstream.push(rel(&layout, &provenance_path(&seg)));
        let j = layout.jlf_training_case(id);
        require(&j, "jlf")?;
        rec.input(&j);
        jlf_cases.push(load_labels(&j)?);
    }
    let dir = layout.cl_model("unet").parent().expect("cl dir").to_path_buf();
    fs::create_dir_all(&dir)?;

    let cases: Vec<ClCase> = atlases
        .iter()
        .zip(&unet_cases)
        .map(|((image, truth), (auto, probs))| ClCase {
            image,
            auto,
            probs: Some(probs),
            truth,
        })
        .collect();
    let model = train_cl(&cases, &cfg.cl)?;
    let path = layout.cl_model("unet");
    model.save(&path)?;
    rec.output(&path);
    let prov = Provenance {
        subjects: cfg.loo_atlases.clone(),
        upstream: unet_upstream,
        ..Provenance::default()
    };
    write_provenance(&layout, &path, prov, &mut rec)?;

    let cases: Vec<ClCase> = atlases
        .iter()
        .zip(&jlf_cases)
        .map(|((image, truth), auto)| ClCase {
            image,
            auto,
            probs: None,
            truth,
        })
        .collect();
    let model = train_cl(&cases, &cfg.cl)?;
    let path = layout.cl_model("jlf");
    model.save(&path)?;
    rec.output(&path);
    let prov = Provenance {
        subjects: cfg.loo_atlases.clone(),
        upstream: vec![rel(&layout, &provenance_path(&layout.jlf_atlas_set()))],
        ..Provenance::default()
    };
    write_provenance(&layout, &path, prov, &mut rec)?;
    rec.finish()
}

/// Applies each corrector to the matching test segmentations.
pub fn cmd_cl_apply(cfg: &PipelineConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.workspace);
    let mut rec = recorder(cfg, "cl-apply");
    let m = cohort(&layout)?;
    let mut models = Vec::new();
    for method in ["unet", "jlf"] {
        let path = layout.cl_model(method);
        require(&path, "cl-train")?;
        rec.input(&path);
        models.push(ClModel::load(&path)?);
    }
    for id in cfg.test_cases() {
        let case = load_case(&layout, &m, &id, &mut rec)?;
        for (model, method, producer) in [(&models[0], "unet", "segment"), (&models[1], "jlf", "jlf")] {
            let path = layout.segmentation(&id, method);
            require(&path, producer)?;
            rec.input(&path);
            let auto = case.orient(&load_labels(&path)?);
            let probs = if method == "unet" {
                Some(case.orient_probs(&load_probs(layout.unet_probs(&id))?))
            } else {
                None
            };
            let fixed = apply_cl(model, &case.image, &auto, probs.as_ref())?;
            save_labels(&layout.segmentation(&id, &format!("{method}_cl")), &case.orient(&fixed), &mut rec)?;
        }
    }
    rec.finish()
}

/// Scores every method on every test case and writes the CSV and the
/// Markdown comparison table.
pub fn cmd_evaluate(cfg: &PipelineConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.workspace);
    let mut rec = recorder(cfg, "evaluate");
    let m = cohort(&layout)?;
    let labels: Vec<u8> = (1..=MAX_LABEL).collect();
    let mut rows = Vec::new();
    for g in &cfg.groups {
        for id in &g.cases {
            let s = find_subject(&m, id)?;
            let lp = layout.cohort_dir().join(s.labels.as_ref().ok_or_else(|| Error::Precondition(format!("`{id}` has no labels")))?);
            require(&lp, "phantom")?;
            rec.input(&lp);
            let truth = load_labels(&lp)?;
            for (method, suffix) in METHODS {
                let path = layout.segmentation(id, suffix);
                let producer = match suffix {
                    "unet" => "segment",
                    "jlf" => "jlf",
                    _ => "cl-apply",
                };
                require(&path, producer)?;
                rec.input(&path);
                let pred = load_labels(&path)?;
                let report = match g.mode {
                    MetricMode::Volume3d => volume_metrics(&pred, &truth)?,
                    MetricMode::Slicewise2d => slicewise_metrics(&pred, &truth, &labels, &annotated_slices(&truth))?,
                };
                rows.extend(EvalRow::from_report(id, method, &report));
            }
        }
    }
    let csv = layout.evaluation_csv();
    fs::create_dir_all(csv.parent().expect("evaluation dir"))?;
    fs::write(&csv, evaluation_csv(&rows))?;
    rec.output(&csv);
    let methods: Vec<&str> = METHODS.iter().map(|(m, _)| *m).collect();
    let groups: Vec<(&str, Vec<String>)> = cfg.groups.iter().map(|g| (g.name.as_str(), g.cases.clone())).collect();
    let md = layout.evaluation_markdown();
    fs::write(&md, evaluation_markdown(&rows, &methods, &groups))?;
    rec.output(&md);
    rec.finish()
}

/// Runs the isolation audit and fails when any violation is found.
pub fn cmd_audit(cfg: &PipelineConfig) -> Result<AuditReport> {
    let layout = Layout::new(&cfg.workspace);
    let mut rec = recorder(cfg, "audit");
    let report = audit_isolation(&layout, &cfg.held_out(), &cfg.loo_atlases)?;
    let path = layout.audit_report();
    fs::create_dir_all(path.parent().expect("evaluation dir"))?;
    write_json(&path, &report)?;
    rec.output(&path);
    rec.finish()?;
    if report.is_clean() {
        Ok(report)
    } else {
        Err(Error::Precondition(format!("isolation audit failed: {}", report.violations.join("; "))))
    }
}

/// Every stage in order, ending with the evaluation and the audit.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Vec<RunRecord>> {
    let stages: [fn(&PipelineConfig) -> Result<RunRecord>; 8] = [
        cmd_phantom,
        cmd_augment,
        cmd_loo_train,
        cmd_segment,
        cmd_jlf,
        cmd_cl_train,
        cmd_cl_apply,
        cmd_evaluate,
    ];
    let mut records = Vec::new();
    for stage in stages {
        records.push(stage(cfg)?);
    }
    cmd_audit(cfg)?;
    Ok(records)
}
