//! Synthetic thigh phantoms.
//!
//! A cylindrical limb of radius `limb_radius` holds a subcutaneous fat ring,
//! a central bone disc and four disc-shaped muscle heads placed at given
//! angles and radial distances. Overlapping heads are split by normalized
//! distance to their centers, which gives adjacent heads with no contrast
//! between them when their intensity means are equal. The limb radius and
//! head sizes are modulated smoothly along z. Heads stop two slices short of
//! either end so every head surface stays inside the volume.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{write_json, DatasetManifest, SubjectEntry};
use crate::volume::{save_qvol, Geometry, LabelVolume, Volume};

/// Bone disc radius as a fraction of the muscle (inner) radius.
pub const BONE_FRACTION: f64 = 0.18;
/// Relative amplitude of the limb radius modulation along z.
const RADIUS_MODULATION: f64 = 0.06;
/// Relative amplitude of the head size modulation along z.
const HEAD_MODULATION: f64 = 0.10;
/// Voxels kept free of heads at every face of the volume.
pub const MARGIN: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityMeans {
    pub background: f64,
    pub fat: f64,
    pub heads: [f64; 4],
    pub bone: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorphologyParams {
    /// Outer limb radius (mm).
    pub limb_radius: f64,
    /// Head center angles (radians, counter-clockwise from +x).
    pub head_angular_offsets: [f64; 4],
    /// Head center distance from the limb axis, fraction of the muscle radius.
    pub head_radial_fractions: [f64; 4],
    /// Head disc radius, fraction of the muscle radius.
    pub head_size_fractions: [f64; 4],
    /// Thickness of the subcutaneous fat ring, fraction of `limb_radius`.
    pub fat_ring_fraction: f64,
    pub intensity_means: IntensityMeans,
    pub noise_sigma: f64,
    pub bias_amplitude: f64,
    pub seed: u64,
}

impl MorphologyParams {
    pub fn validate(&self) -> Result<()> {
        let frac = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::Domain(format!("{name} = {v} outside (0,1)")))
            }
        };
        if !(self.limb_radius.is_finite() && self.limb_radius > 0.0) {
            return Err(Error::Domain(format!("limb_radius = {}", self.limb_radius)));
        }
        for k in 0..4 {
            frac("head_radial_fraction", self.head_radial_fractions[k])?;
            frac("head_size_fraction", self.head_size_fractions[k])?;
            if !self.head_angular_offsets[k].is_finite() {
                return Err(Error::Domain("non-finite head angle".into()));
            }
        }
        if !(0.0..0.5).contains(&self.fat_ring_fraction) {
            return Err(Error::Domain(format!("fat_ring_fraction = {}", self.fat_ring_fraction)));
        }
        if !(0.0..1.0).contains(&self.bias_amplitude) {
            return Err(Error::Domain(format!("bias_amplitude = {}", self.bias_amplitude)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Domain(format!("noise_sigma = {}", self.noise_sigma)));
        }
        Ok(())
    }

    /// Copy with per-subject variation: radius and fractions scaled by up to
    /// ±`amount`, angles shifted by up to ±`amount` radians.
    pub fn jittered(&self, amount: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = self.clone();
        let scale = |v: f64, rng: &mut ChaCha8Rng| (v * (1.0 + rng.gen_range(-amount..=amount))).clamp(0.02, 0.98);
        p.limb_radius *= 1.0 + rng.gen_range(-amount..=amount);
        for k in 0..4 {
            p.head_angular_offsets[k] += rng.gen_range(-amount..=amount);
            p.head_radial_fractions[k] = scale(p.head_radial_fractions[k], &mut rng);
            p.head_size_fractions[k] = scale(p.head_size_fractions[k], &mut rng);
        }
        p.seed = seed;
        p
    }
}

/// Tissue class of a point, before intensities are assigned.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tissue {
    Background,
    Fat,
    Bone,
    Head(u8),
}

impl Tissue {
    pub fn label(self) -> u8 {
        match self {
            Tissue::Head(k) => k,
            _ => 0,
        }
    }
}

/// Slice-dependent shape of the limb.
struct SliceShape {
    outer: f64,
    inner: f64,
    bone: f64,
    heads: [(f64, f64, f64); 4],
    has_heads: bool,
}

fn slice_shape(p: &MorphologyParams, z: usize, nz: usize) -> SliceShape {
    let t = if nz > 1 { z as f64 / (nz - 1) as f64 } else { 0.5 };
    let outer = p.limb_radius * (1.0 + RADIUS_MODULATION * (2.0 * PI * t).sin());
    let inner = outer * (1.0 - p.fat_ring_fraction);
    let heads = std::array::from_fn(|k| {
        let a = p.head_angular_offsets[k];
        let rho = p.head_radial_fractions[k] * inner;
        let size = p.head_size_fractions[k] * inner * (1.0 + HEAD_MODULATION * (2.0 * PI * t + k as f64).sin());
        (rho * a.cos(), rho * a.sin(), size)
    });
    SliceShape {
        outer,
        inner,
        bone: BONE_FRACTION * inner,
        heads,
        has_heads: z >= MARGIN && z + MARGIN < nz,
    }
}

fn classify(shape: &SliceShape, dx: f64, dy: f64) -> Tissue {
    let r = dx.hypot(dy);
    if r > shape.outer {
        return Tissue::Background;
    }
    if r > shape.inner {
        return Tissue::Fat;
    }
    if r <= shape.bone {
        return Tissue::Bone;
    }
    if shape.has_heads {
        // Overlapping heads split along equal normalized distance.
        let closest = shape
            .heads
            .iter()
            .enumerate()
            .map(|(k, &(cx, cy, size))| ((dx - cx).hypot(dy - cy) / size, k as u8 + 1))
            .filter(|&(d, _)| d <= 1.0)
            .min_by(|a, b| a.0.total_cmp(&b.0));
        if let Some((_, k)) = closest {
            return Tissue::Head(k);
        }
    }
    Tissue::Fat
}

/// Limb axis position (mm) for a geometry: the in-plane center of the grid.
pub fn limb_axis(geom: &Geometry) -> [f64; 2] {
    let e = geom.extent();
    [geom.origin[0] + e[0] / 2.0, geom.origin[1] + e[1] / 2.0]
}

/// Tissue at voxel `(x, y, z)`.
pub fn tissue_at(p: &MorphologyParams, geom: &Geometry, x: usize, y: usize, z: usize) -> Tissue {
    let shape = slice_shape(p, z, geom.dims[2]);
    let axis = limb_axis(geom);
    let w = geom.world(x, y, z);
    classify(&shape, w[0] - axis[0], w[1] - axis[1])
}

fn bias_coefficients(rng: &mut ChaCha8Rng) -> [[f64; 2]; 3] {
    std::array::from_fn(|_| {
        let c1: f64 = rng.gen_range(-0.5..0.5);
        let c2: f64 = rng.gen_range(-0.5..0.5);
        [c1, c2]
    })
}

/// Generates a phantom intensity volume and its labels.
pub fn generate_phantom(p: &MorphologyParams, dims: [usize; 3], spacing: [f64; 3]) -> Result<(Volume, LabelVolume)> {
    p.validate()?;
    if dims.iter().any(|&d| d < 16) {
        return Err(Error::Domain(format!("phantom dims {dims:?} must each be >= 16")));
    }
    let geom = Geometry::new(dims, spacing, [0.0; 3])?;
    let [nx, ny, nz] = dims;

    let axis = limb_axis(&geom);
    let reach = p.limb_radius * (1.0 + RADIUS_MODULATION);
    for a in 0..2 {
        let room = axis[a] - MARGIN as f64 * spacing[a];
        if reach > room {
            return Err(Error::DegenerateGeometry(format!(
                "limb radius {:.1} mm does not fit in {} voxels of {} mm with a {MARGIN}-voxel margin",
                p.limb_radius, dims[a], spacing[a]
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let bias = bias_coefficients(&mut rng);
    let noise = Normal::new(0.0, p.noise_sigma.max(0.0)).map_err(|e| Error::Domain(e.to_string()))?;
    let m = &p.intensity_means;

    let mut data = Vec::with_capacity(geom.len());
    let mut labels = Vec::with_capacity(geom.len());
    let norm = |i: usize, n: usize| if n > 1 { 2.0 * i as f64 / (n - 1) as f64 - 1.0 } else { 0.0 };
    for z in 0..nz {
        let shape = slice_shape(p, z, nz);
        let bz = bias[2][0] * norm(z, nz) + bias[2][1] * norm(z, nz).powi(2);
        for y in 0..ny {
            let by = bias[1][0] * norm(y, ny) + bias[1][1] * norm(y, ny).powi(2);
            for x in 0..nx {
                let bx = bias[0][0] * norm(x, nx) + bias[0][1] * norm(x, nx).powi(2);
                let w = geom.world(x, y, z);
                let tissue = classify(&shape, w[0] - axis[0], w[1] - axis[1]);
                let mean = match tissue {
                    Tissue::Background => m.background,
                    Tissue::Fat => m.fat,
                    Tissue::Bone => m.bone,
                    Tissue::Head(k) => m.heads[k as usize - 1],
                };
                let field = 1.0 + p.bias_amplitude * (bx + by + bz) / 3.0;
                let n = if p.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                data.push((mean * field + n) as f32);
                labels.push(tissue.label());
            }
        }
    }

    let labels = LabelVolume::new(geom.clone(), labels)?;
    let counts = labels.label_counts();
    if let Some(k) = (1..=4).find(|&k| counts[k] == 0) {
        return Err(Error::DegenerateGeometry(format!("head {k} has no voxels at this resolution")));
    }
    Ok((Volume::new(geom, data)?, labels))
}

/// The three morphology groups: young male, elder male, female.
pub fn morphology_presets() -> Vec<(&'static str, MorphologyParams)> {
    let means = IntensityMeans {
        background: 0.0,
        fat: 60.0,
        heads: [160.0; 4],
        bone: 30.0,
    };
    let young_male = MorphologyParams {
        limb_radius: 80.0,
        head_angular_offsets: [1.60, 0.30, 1.45, 2.75],
        head_radial_fractions: [0.66, 0.58, 0.34, 0.58],
        head_size_fractions: [0.26, 0.36, 0.26, 0.32],
        fat_ring_fraction: 0.10,
        intensity_means: means.clone(),
        noise_sigma: 8.0,
        bias_amplitude: 0.15,
        seed: 1,
    };
    let elder_male = MorphologyParams {
        limb_radius: 70.0,
        head_angular_offsets: [1.55, 0.35, 1.50, 2.70],
        head_radial_fractions: [0.64, 0.58, 0.36, 0.56],
        head_size_fractions: [0.22, 0.31, 0.23, 0.28],
        fat_ring_fraction: 0.17,
        intensity_means: means.clone(),
        noise_sigma: 8.0,
        bias_amplitude: 0.15,
        seed: 2,
    };
    let female = MorphologyParams {
        limb_radius: 58.0,
        head_angular_offsets: [1.70, 0.40, 1.50, 2.65],
        head_radial_fractions: [0.62, 0.56, 0.36, 0.56],
        head_size_fractions: [0.25, 0.34, 0.24, 0.36],
        fat_ring_fraction: 0.24,
        intensity_means: means,
        noise_sigma: 8.0,
        bias_amplitude: 0.15,
        seed: 3,
    };
    vec![("young_male", young_male), ("elder_male", elder_male), ("female", female)]
}

pub fn preset(name: &str) -> Result<MorphologyParams> {
    morphology_presets()
        .into_iter()
        .find(|(n, _)| *n == name)
        .map(|(_, p)| p)
        .ok_or_else(|| Error::UnknownId(format!("preset {name}")))
}

/// SplitMix64 step; derives independent per-subject seeds.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortSpec {
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    /// Presets cycled over the labeled subjects.
    pub atlas_presets: Vec<String>,
    /// Presets cycled over the unlabeled subjects.
    pub unlabeled_presets: Vec<String>,
    /// Mirrored left-thigh test subjects (with labels), by preset.
    #[serde(default)]
    pub left_test_presets: Vec<String>,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Per-subject jitter of the preset morphology.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n_labeled: 7,
            n_unlabeled: 5,
            atlas_presets: vec!["young_male".into()],
            unlabeled_presets: vec!["young_male".into(), "elder_male".into(), "female".into()],
            left_test_presets: Vec::new(),
            dims: [160, 160, 48],
            spacing: [1.5, 1.5, 3.0],
            jitter: 0.04,
            seed: 0,
        }
    }
}

fn subject(
    out_dir: &Path,
    id: String,
    preset_name: &str,
    seed: u64,
    spec: &CohortSpec,
    with_labels: bool,
    mirrored: bool,
) -> Result<SubjectEntry> {
    let params = preset(preset_name)?.jittered(spec.jitter, seed);
    let (mut image, mut labels) = generate_phantom(&params, spec.dims, spec.spacing)?;
    if mirrored {
        image = image.mirror_x();
        labels = labels.mirror_x();
    }
    let image_rel = format!("{id}.qvol");
    save_qvol(out_dir.join(&image_rel), &image)?;
    let labels_rel = if with_labels {
        let rel = format!("{id}_labels.qvol");
        save_qvol(out_dir.join(&rel), &labels)?;
        Some(rel)
    } else {
        None
    };
    Ok(SubjectEntry {
        id,
        image: image_rel,
        labels: labels_rel,
        preset: preset_name.to_string(),
        seed,
        mirrored,
    })
}

/// Writes a labeled/unlabeled phantom cohort plus `manifest.json` into `out_dir`.
pub fn generate_cohort(spec: &CohortSpec, out_dir: &Path) -> Result<DatasetManifest> {
    if spec.n_labeled < 2 {
        return Err(Error::Precondition(format!("n_labeled = {} (need >= 2)", spec.n_labeled)));
    }
    if spec.atlas_presets.is_empty() || (spec.n_unlabeled > 0 && spec.unlabeled_presets.is_empty()) {
        return Err(Error::Precondition("empty preset mix".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut manifest = DatasetManifest::default();
    for i in 0..spec.n_labeled {
        let name = &spec.atlas_presets[i % spec.atlas_presets.len()];
        let seed = derive_seed(spec.seed, i as u64);
        manifest
            .atlases
            .push(subject(out_dir, format!("atlas{i}"), name, seed, spec, true, false)?);
    }
    for i in 0..spec.n_unlabeled {
        let name = &spec.unlabeled_presets[i % spec.unlabeled_presets.len()];
        let seed = derive_seed(spec.seed, 1000 + i as u64);
        manifest
            .unlabeled
            .push(subject(out_dir, format!("unl{i}"), name, seed, spec, false, false)?);
    }
    for (i, name) in spec.left_test_presets.iter().enumerate() {
        let seed = derive_seed(spec.seed, 2000 + i as u64);
        manifest
            .left_tests
            .push(subject(out_dir, format!("left{i}"), name, seed, spec, true, true)?);
    }
    write_json(out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}
