//! Multi-atlas segmentation by registration and joint label fusion.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deform::{apply_warp, register, Interp, RegistrationParams};
use crate::error::{Error, Result};
use crate::volume::{LabelVolume, ProbVolume, Volume};
use crate::NUM_CLASSES;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JlfParams {
    pub patch_radius: usize,
    pub search_radius: usize,
    pub beta: f64,
    pub epsilon: f64,
}

impl Default for JlfParams {
    fn default() -> Self {
        Self {
            patch_radius: 2,
            search_radius: 2,
            beta: 2.0,
            epsilon: 0.1,
        }
    }
}

impl JlfParams {
    pub fn validate(&self) -> Result<()> {
        if self.patch_radius < 1 {
            return Err(Error::Domain("patch radius must be at least 1".into()));
        }
        if self.beta < 1.0 || !self.beta.is_finite() {
            return Err(Error::Domain(format!("beta {} < 1", self.beta)));
        }
        if self.epsilon <= 0.0 || !self.epsilon.is_finite() {
            return Err(Error::Domain(format!("epsilon {} must be positive", self.epsilon)));
        }
        Ok(())
    }
}

/// An atlas resampled into target space.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpedAtlas {
    pub image: Volume,
    pub labels: LabelVolume,
}

/// Registers every atlas onto `target` and warps its image and labels.
/// Atlases whose registration fails are skipped with a warning; at least two
/// must survive.
pub fn warp_atlases(atlases: &[(Volume, LabelVolume)], target: &Volume, params: &RegistrationParams) -> Result<Vec<WarpedAtlas>> {
    if atlases.len() < 2 {
        return Err(Error::Precondition(format!("joint label fusion needs at least 2 atlases, got {}", atlases.len())));
    }
    let results: Vec<Result<WarpedAtlas>> = atlases
        .par_iter()
        .map(|(img, lab)| {
            img.geom().check_same(lab.geom())?;
            let reg = register(target, img, params)?;
            Ok(WarpedAtlas {
                image: apply_warp(img, &reg.field, Interp::Linear)?,
                labels: apply_warp(lab, &reg.field, Interp::Nearest)?,
            })
        })
        .collect();
    let mut out = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(w) => out.push(w),
            Err(e @ Error::Convergence { .. }) => log::warn!("skipping atlas {i}: {e}"),
            Err(e) => return Err(e),
        }
    }
    if out.len() < 2 {
        return Err(Error::Precondition(format!("only {} atlas registrations succeeded", out.len())));
    }
    Ok(out)
}

fn clamp(c: usize, d: isize, n: usize) -> usize {
    (c as isize + d).clamp(0, n as isize - 1) as usize
}

/// Intensities of the cube of radius `r` around `center`, clamped at the
/// border, x fastest.
pub fn patch(v: &Volume, center: [usize; 3], r: usize) -> Vec<f32> {
    let [nx, ny, nz] = v.dims();
    let ri = r as isize;
    let mut out = Vec::with_capacity((2 * r + 1).pow(3));
    for dz in -ri..=ri {
        for dy in -ri..=ri {
            for dx in -ri..=ri {
                out.push(v.get(clamp(center[0], dx, nx), clamp(center[1], dy, ny), clamp(center[2], dz, nz)));
            }
        }
    }
    out
}

fn sad(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() as f64).sum()
}

/// Offset within Chebyshev radius `rs` whose atlas patch has the smallest
/// sum of absolute differences to `target_patch`; ties go to the
/// lexicographically smallest `(dx, dy, dz)`. Returns the offset, its SAD
/// and the matching atlas patch.
pub fn local_patch_search(
    target_patch: &[f32],
    atlas: &Volume,
    center: [usize; 3],
    rp: usize,
    rs: usize,
) -> ([isize; 3], f64, Vec<f32>) {
    let dims = atlas.dims();
    let rsi = rs as isize;
    let mut best: Option<([isize; 3], f64, Vec<f32>)> = None;
    for dx in -rsi..=rsi {
        for dy in -rsi..=rsi {
            for dz in -rsi..=rsi {
                let c = [clamp(center[0], dx, dims[0]), clamp(center[1], dy, dims[1]), clamp(center[2], dz, dims[2])];
                let p = patch(atlas, c, rp);
                let s = sad(target_patch, &p);
                if best.as_ref().map_or(true, |b| s < b.1) {
                    best = Some(([dx, dy, dz], s, p));
                }
            }
        }
    }
    best.expect("search window is never empty")
}

/// `M_ij = (Σ |A_i − T| · |A_j − T|)^β` over patch entries.
pub fn dependency_matrix(target_patch: &[f32], atlas_patches: &[Vec<f32>], beta: f64) -> DMatrix<f64> {
    let n = atlas_patches.len();
    let resid: Vec<Vec<f64>> = atlas_patches
        .iter()
        .map(|p| p.iter().zip(target_patch).map(|(a, t)| (a - t).abs() as f64).collect())
        .collect();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let s: f64 = resid[i].iter().zip(&resid[j]).map(|(a, b)| a * b).sum();
            let v = s.powf(beta);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// `w = (M + εI)⁻¹ 1`, normalized to sum to one, via a Cholesky solve.
pub fn fusion_weights(m: &DMatrix<f64>, epsilon: f64) -> Result<Vec<f64>> {
    let n = m.nrows();
    let a = m + DMatrix::identity(n, n) * epsilon;
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Conditioning(format!("M + {epsilon}·I is not positive definite; raise epsilon")))?;
    let w = chol.solve(&DVector::from_element(n, 1.0));
    let total: f64 = w.sum();
    if !total.is_finite() || total == 0.0 || w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Conditioning("non-finite fusion weights; raise epsilon".into()));
    }
    Ok(w.iter().map(|v| v / total).collect())
}

/// Fuses warped atlas labels voxel by voxel. Similarity is measured on
/// per-volume normalized intensities; votes use each atlas label at the
/// voxel itself. Voxels where all atlases agree take that label directly.
pub fn jlf_segment(target: &Volume, atlases: &[WarpedAtlas], params: &JlfParams) -> Result<(LabelVolume, ProbVolume)> {
    params.validate()?;
    if atlases.len() < 2 {
        return Err(Error::Precondition(format!("joint label fusion needs at least 2 atlases, got {}", atlases.len())));
    }
    for a in atlases {
        target.geom().check_same(a.image.geom())?;
        target.geom().check_same(a.labels.geom())?;
    }
    let t_norm = target.normalized();
    let a_norm: Vec<Volume> = atlases.iter().map(|a| a.image.normalized()).collect();
    let geom = target.geom();
    let [nx, ny, nz] = geom.dims;
    let plane = nx * ny;
    let slices: Vec<Result<(Vec<u8>, Vec<[f32; NUM_CLASSES]>)>> = (0..nz)
        .into_par_iter()
        .map(|z| {
            let mut labels = Vec::with_capacity(plane);
            let mut votes = Vec::with_capacity(plane);
            for y in 0..ny {
                for x in 0..nx {
                    let i = geom.index(x, y, z);
                    let first = atlases[0].labels.data()[i];
                    if atlases.iter().all(|a| a.labels.data()[i] == first) {
                        labels.push(first);
                        let mut v = [0.0f32; NUM_CLASSES];
                        v[first as usize] = 1.0;
                        votes.push(v);
                        continue;
                    }
                    let tp = patch(&t_norm, [x, y, z], params.patch_radius);
                    let ap: Vec<Vec<f32>> = a_norm
                        .iter()
                        .map(|a| local_patch_search(&tp, a, [x, y, z], params.patch_radius, params.search_radius).2)
                        .collect();
                    let w = fusion_weights(&dependency_matrix(&tp, &ap, params.beta), params.epsilon)?;
                    let mut v = [0.0f64; NUM_CLASSES];
                    for (a, wi) in atlases.iter().zip(&w) {
                        v[a.labels.data()[i] as usize] += wi;
                    }
                    let mut best = 0;
                    for k in 1..NUM_CLASSES {
                        if v[k] > v[best] {
                            best = k;
                        }
                    }
                    labels.push(best as u8);
                    votes.push(v.map(|x| x as f32));
                }
            }
            Ok((labels, votes))
        })
        .collect();
    let mut labels = Vec::with_capacity(geom.len());
    let mut consensus = ProbVolume::zeros(geom.clone());
    for (z, s) in slices.into_iter().enumerate() {
        let (l, v) = s?;
        labels.extend(l);
        for (j, votes) in v.iter().enumerate() {
            for k in 0..NUM_CLASSES {
                consensus.class_mut(k)[z * plane + j] = votes[k];
            }
        }
    }
    Ok((LabelVolume::new(geom.clone(), labels)?, consensus))
}
