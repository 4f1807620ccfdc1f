use serde::{Deserialize, Serialize};

use super::BSplineField;
use crate::error::{Error, Result};
use crate::volume::{Geometry, Grid, Voxel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    Linear,
    Nearest,
}

/// Trilinear sample at a continuous index position; zero outside the grid.
#[inline]
pub(crate) fn sample_linear(data: &[f32], dims: [usize; 3], p: [f64; 3]) -> f32 {
    let mut base = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..3 {
        let hi = (dims[a] - 1) as f64;
        if !(p[a] >= 0.0 && p[a] <= hi) {
            return 0.0;
        }
        let f = p[a].floor();
        base[a] = f as usize;
        frac[a] = p[a] - f;
        if base[a] == dims[a] - 1 {
            // Exactly on the last plane.
            base[a] = base[a].saturating_sub(usize::from(dims[a] > 1));
            frac[a] = if dims[a] > 1 { 1.0 } else { 0.0 };
        }
    }
    let [nx, ny, _] = dims;
    let step = [
        usize::from(dims[0] > 1),
        if dims[1] > 1 { nx } else { 0 },
        if dims[2] > 1 { nx * ny } else { 0 },
    ];
    let i000 = base[0] + nx * (base[1] + ny * base[2]);
    let [fx, fy, fz] = frac;
    let v = |o: usize| data[i000 + o] as f64;
    let c00 = v(0) * (1.0 - fx) + v(step[0]) * fx;
    let c10 = v(step[1]) * (1.0 - fx) + v(step[1] + step[0]) * fx;
    let c01 = v(step[2]) * (1.0 - fx) + v(step[2] + step[0]) * fx;
    let c11 = v(step[2] + step[1]) * (1.0 - fx) + v(step[2] + step[1] + step[0]) * fx;
    let c0 = c00 * (1.0 - fy) + c10 * fy;
    let c1 = c01 * (1.0 - fy) + c11 * fy;
    (c0 * (1.0 - fz) + c1 * fz) as f32
}

#[inline]
pub(crate) fn sample_nearest<T: Copy + Default>(data: &[T], dims: [usize; 3], p: [f64; 3]) -> T {
    let mut idx = [0usize; 3];
    for a in 0..3 {
        let r = (p[a] + 0.5).floor();
        if !(r >= 0.0 && r < dims[a] as f64) {
            return T::default();
        }
        idx[a] = r as usize;
    }
    data[idx[0] + dims[0] * (idx[1] + dims[1] * idx[2])]
}

/// Index-space sample positions `i + d(i) / spacing` for a dense displacement.
pub(crate) fn sample_positions<'a>(geom: &'a Geometry, dense: &'a [[f64; 3]]) -> impl Iterator<Item = [f64; 3]> + 'a {
    let s = geom.spacing;
    dense.iter().enumerate().map(move |(i, d)| {
        let c = geom.coords(i);
        [
            c[0] as f64 + d[0] / s[0],
            c[1] as f64 + d[1] / s[1],
            c[2] as f64 + d[2] / s[2],
        ]
    })
}

/// Element types that can be resampled by a warp.
pub trait Warpable: Voxel {
    fn resample(src: &[Self], dims: [usize; 3], positions: impl Iterator<Item = [f64; 3]>, interp: Interp) -> Result<Vec<Self>>;
}

impl Warpable for f32 {
    fn resample(src: &[f32], dims: [usize; 3], positions: impl Iterator<Item = [f64; 3]>, interp: Interp) -> Result<Vec<f32>> {
        Ok(match interp {
            Interp::Linear => positions.map(|p| sample_linear(src, dims, p)).collect(),
            Interp::Nearest => positions.map(|p| sample_nearest(src, dims, p)).collect(),
        })
    }
}

impl Warpable for u8 {
    fn resample(src: &[u8], dims: [usize; 3], positions: impl Iterator<Item = [f64; 3]>, interp: Interp) -> Result<Vec<u8>> {
        match interp {
            Interp::Nearest => Ok(positions.map(|p| sample_nearest(src, dims, p)).collect()),
            Interp::Linear => Err(Error::Usage("label volumes must be warped with nearest-neighbour interpolation".into())),
        }
    }
}

/// Backward warp: output voxel `x` samples the input at `x + d(x)`.
/// Samples falling outside the input take the background value 0.
/// Label volumes must use [`Interp::Nearest`].
pub fn apply_warp<T: Warpable>(v: &Grid<T>, field: &BSplineField, interp: Interp) -> Result<Grid<T>> {
    let dense = field.dense(v.geom())?;
    warp_dense(v, &dense, interp)
}

pub(crate) fn warp_dense<T: Warpable>(v: &Grid<T>, dense: &[[f64; 3]], interp: Interp) -> Result<Grid<T>> {
    let geom = v.geom();
    let data = T::resample(v.data(), geom.dims, sample_positions(geom, dense), interp)?;
    Grid::new(geom.clone(), data)
}
