//! Corrective learning: boosted per-label classifiers trained on
//! (automatic segmentation, truth) pairs that relabel voxels near the
//! automatic foreground.

mod boost;
mod features;

pub use boost::{adaboost, BinnedPool, BoostTrace, Ensemble, Stump};
pub use features::{extract_features, feature_len, working_roi, CoordFrame};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{read_json, write_json};
use crate::volume::{LabelVolume, ProbVolume, Volume};
use crate::NUM_CLASSES;

const MAGIC: &str = "QCL1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClParams {
    pub rounds: usize,
    pub roi_radius: usize,
    pub feature_radius: usize,
    pub thresholds: usize,
    /// Upper bound on pooled training voxels; larger pools are subsampled.
    pub max_samples: usize,
    pub seed: u64,
}

impl Default for ClParams {
    fn default() -> Self {
        Self {
            rounds: 50,
            roi_radius: 2,
            feature_radius: 1,
            thresholds: 32,
            max_samples: 120_000,
            seed: 0,
        }
    }
}

/// One training example for the corrector.
pub struct ClCase<'a> {
    pub image: &'a Volume,
    pub auto: &'a LabelVolume,
    /// Class probabilities of the automatic method, when it has them.
    pub probs: Option<&'a ProbVolume>,
    pub truth: &'a LabelVolume,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClModel {
    pub magic: String,
    pub version: u32,
    pub roi_radius: usize,
    pub feature_radius: usize,
    pub feature_len: usize,
    /// Intensities are z-scored per volume before feature extraction.
    pub intensity_normalization: String,
    pub ensembles: Vec<Ensemble>,
}

impl ClModel {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let m: ClModel = read_json(path)?;
        if m.magic != MAGIC {
            return Err(Error::format("magic", format!("expected {MAGIC}, found {}", m.magic)));
        }
        if m.version != 1 {
            return Err(Error::format("version", format!("unsupported version {}", m.version)));
        }
        m.check()?;
        Ok(m)
    }

    fn check(&self) -> Result<()> {
        if self.feature_len != feature_len(self.feature_radius) {
            return Err(Error::Compatibility(format!(
                "model expects {} features, radius {} yields {}",
                self.feature_len,
                self.feature_radius,
                feature_len(self.feature_radius)
            )));
        }
        if self.ensembles.len() != NUM_CLASSES {
            return Err(Error::Compatibility(format!("{} ensembles, expected {NUM_CLASSES}", self.ensembles.len())));
        }
        let bad = self
            .ensembles
            .iter()
            .flat_map(|e| &e.stumps)
            .any(|s| !s.alpha.is_finite() || s.f >= self.feature_len);
        if bad {
            return Err(Error::Compatibility("stump with non-finite vote or out-of-range feature".into()));
        }
        Ok(())
    }
}

fn roi_indices(auto: &LabelVolume, r: usize) -> Vec<usize> {
    working_roi(auto, r)
        .iter()
        .enumerate()
        .filter_map(|(i, &b)| b.then_some(i))
        .collect()
}

/// Trains one boosted ensemble per label over pooled ROI voxels.
pub fn train_cl(cases: &[ClCase<'_>], params: &ClParams) -> Result<ClModel> {
    if cases.is_empty() {
        return Err(Error::Training("no corrective-learning cases".into()));
    }
    for c in cases {
        c.image.geom().check_same(c.auto.geom())?;
        c.image.geom().check_same(c.truth.geom())?;
        if let Some(p) = c.probs {
            c.image.geom().check_same(p.geom())?;
        }
    }
    let mut pool: Vec<(usize, usize)> = cases
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| roi_indices(c.auto, params.roi_radius).into_iter().map(move |i| (ci, i)))
        .collect();
    if pool.is_empty() {
        return Err(Error::Training("working ROI is empty in every case".into()));
    }
    if pool.len() > params.max_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        pool.shuffle(&mut rng);
        pool.truncate(params.max_samples);
        pool.sort_unstable();
    }
    let normalized: Vec<Volume> = cases.iter().map(|c| c.image.normalized()).collect();
    let frames: Vec<CoordFrame> = cases.iter().map(|c| CoordFrame::of(c.auto)).collect();
    let flen = feature_len(params.feature_radius);
    let rows: Vec<f32> = pool
        .par_chunks(4096)
        .flat_map_iter(|chunk| {
            let mut out = Vec::with_capacity(chunk.len() * flen);
            for &(ci, i) in chunk {
                let c = &cases[ci];
                extract_features(
                    &normalized[ci],
                    c.auto,
                    c.probs,
                    &frames[ci],
                    c.image.geom().coords(i),
                    params.feature_radius,
                    &mut out,
                );
            }
            out
        })
        .collect();
    let truth: Vec<u8> = pool.iter().map(|&(ci, i)| cases[ci].truth.data()[i]).collect();
    let binned = BinnedPool::new(&rows, flen, params.thresholds);
    let ensembles = (0..NUM_CLASSES as u8)
        .map(|k| {
            let targets: Vec<bool> = truth.iter().map(|&t| t == k).collect();
            adaboost(&binned, &targets, k, params.rounds).0
        })
        .collect();
    let model = ClModel {
        magic: MAGIC.into(),
        version: 1,
        roi_radius: params.roi_radius,
        feature_radius: params.feature_radius,
        feature_len: flen,
        intensity_normalization: "volume-zscore".into(),
        ensembles,
    };
    model.check()?;
    Ok(model)
}

/// Relabels ROI voxels by the highest ensemble score; ties keep the
/// automatic label, then the lower label. Voxels outside the ROI are copied.
pub fn apply_cl(model: &ClModel, v: &Volume, auto: &LabelVolume, probs: Option<&ProbVolume>) -> Result<LabelVolume> {
    model.check()?;
    v.geom().check_same(auto.geom())?;
    if let Some(p) = probs {
        v.geom().check_same(p.geom())?;
    }
    let roi = roi_indices(auto, model.roi_radius);
    let norm = v.normalized();
    let frame = CoordFrame::of(auto);
    let new_labels: Vec<(usize, u8)> = roi
        .par_chunks(2048)
        .flat_map_iter(|chunk| {
            let mut feats = Vec::with_capacity(model.feature_len);
            chunk
                .iter()
                .map(|&i| {
                    feats.clear();
                    extract_features(&norm, auto, probs, &frame, v.geom().coords(i), model.feature_radius, &mut feats);
                    let current = auto.data()[i];
                    let scores: Vec<f64> = model.ensembles.iter().map(|e| e.score(&feats)).collect();
                    let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let label = if scores[current as usize] == top {
                        current
                    } else {
                        scores.iter().position(|&s| s == top).expect("maximum exists") as u8
                    };
                    (i, label)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let mut data = auto.data().to_vec();
    for (i, l) in new_labels {
        data[i] = l;
    }
    LabelVolume::new(auto.geom().clone(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Geometry;

    fn blob_case(seed: usize) -> (Volume, LabelVolume) {
        let g = Geometry::new([12, 12, 6], [1.0; 3], [0.0; 3]).unwrap();
        let labels = LabelVolume::from_fn(g.clone(), |x, y, _| {
            let (cx, cy) = (5 + seed % 2, 6);
            let d = (x as i64 - cx as i64).pow(2) + (y as i64 - cy as i64).pow(2);
            if d <= 9 {
                if x < cx { 1 } else { 2 }
            } else {
                0
            }
        })
        .unwrap();
        let image = Volume::from_fn(g, |x, y, z| labels.get(x, y, z) as f32 * 50.0 + ((x * 3 + y + seed) % 5) as f32).unwrap();
        (image, labels)
    }

    #[test]
    fn identity_cases_learn_identity() {
        let data: Vec<_> = (0..3).map(blob_case).collect();
        let cases: Vec<ClCase> = data
            .iter()
            .map(|(v, l)| ClCase { image: v, auto: l, probs: None, truth: l })
            .collect();
        let model = train_cl(&cases, &ClParams { rounds: 10, ..ClParams::default() }).unwrap();
        let (v, l) = blob_case(4);
        let out = apply_cl(&model, &v, &l, None).unwrap();
        for k in 1..=2 {
            assert!(crate::metrics::dice(&out, &l, k).unwrap() >= 0.99);
        }
    }

    #[test]
    fn empty_roi_is_identity_and_training_error() {
        let (v, l) = blob_case(0);
        let empty = LabelVolume::filled(l.geom().clone(), 0);
        let cases = [ClCase { image: &v, auto: &empty, probs: None, truth: &l }];
        assert!(matches!(train_cl(&cases, &ClParams::default()), Err(Error::Training(_))));
        let ok = [ClCase { image: &v, auto: &l, probs: None, truth: &l }];
        let model = train_cl(&ok, &ClParams { rounds: 3, ..ClParams::default() }).unwrap();
        assert_eq!(apply_cl(&model, &v, &empty, None).unwrap(), empty);
    }

    #[test]
    fn file_round_trip_and_compatibility() {
        let (v, l) = blob_case(1);
        let cases = [ClCase { image: &v, auto: &l, probs: None, truth: &l }];
        let model = train_cl(&cases, &ClParams { rounds: 4, ..ClParams::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.qcl");
        model.save(&path).unwrap();
        assert!(std::fs::read_to_string(&path).unwrap().contains("\"magic\": \"QCL1\""));
        assert_eq!(ClModel::load(&path).unwrap(), model);
        let mut bad = model.clone();
        bad.feature_radius = 2;
        assert!(matches!(apply_cl(&bad, &v, &l, None), Err(Error::Compatibility(_))));
    }
}
