//! Multiresolution B-spline registration by gradient descent on the mean
//! squared intensity difference.
//!
//! Level 0 works on the coarsest image pyramid level with the coarsest
//! control lattice; each following level halves the control spacing
//! (exact dyadic refinement of the current field) and doubles the image
//! resolution. The finest level runs on the unsmoothed input images. Within
//! a level the control displacements move by `step` mm along the normalized
//! negative gradient; a step that does not lower the cost is halved and
//! retried, so the per-level cost trace never increases.

use serde::{Deserialize, Serialize};

use super::filter::{downsample2, gradient};
use super::warp::{sample_linear, sample_positions};
use super::BSplineField;
use crate::error::{Error, Result};
use crate::volume::{Geometry, Volume};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationParams {
    pub levels: usize,
    /// Maximum accepted steps per level.
    pub iterations: usize,
    /// Largest control-point move per step at the finest level (mm).
    pub step: f64,
    /// Control spacing at the coarsest level (mm); defaults to a quarter of
    /// the volume extent per axis.
    #[serde(default)]
    pub coarse_grid_spacing: Option<[f64; 3]>,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        Self {
            levels: 3,
            iterations: 30,
            step: 2.0,
            coarse_grid_spacing: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Registration {
    pub field: BSplineField,
    /// Per level: the cost before descent and after every accepted step.
    pub ssd_trace: Vec<Vec<f64>>,
    /// Mean squared difference of the full-resolution images before and after.
    pub initial_ssd: f64,
    pub final_ssd: f64,
}

/// Mean squared difference between `fixed` and `moving` warped by `dense`.
pub fn warped_ssd(fixed: &Volume, moving: &Volume, dense: &[[f64; 3]]) -> f64 {
    let g = fixed.geom();
    let dims = g.dims;
    let sum: f64 = sample_positions(g, dense)
        .zip(fixed.data())
        .map(|(p, &f)| {
            let r = sample_linear(moving.data(), dims, p) as f64 - f as f64;
            r * r
        })
        .sum();
    sum / fixed.len() as f64
}

pub fn ssd(a: &Volume, b: &Volume) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let r = x as f64 - y as f64;
            r * r
        })
        .sum::<f64>()
        / a.len() as f64
}

struct Level {
    fixed: Volume,
    moving: Volume,
    grad: [Vec<f32>; 3],
}

fn cost_and_gradient(level: &Level, field: &BSplineField, support: &[super::bspline::AxisSupport; 3]) -> (f64, Vec<[f64; 3]>) {
    let g = level.fixed.geom();
    let dims = g.dims;
    let dense = field.dense_with(g, support);
    let n = level.fixed.len() as f64;
    let mut cost = 0.0;
    let per_voxel: Vec<[f64; 3]> = sample_positions(g, &dense)
        .zip(level.fixed.data())
        .map(|(p, &f)| {
            let r = sample_linear(level.moving.data(), dims, p) as f64 - f as f64;
            cost += r * r;
            let s = 2.0 * r / n;
            [
                s * sample_linear(&level.grad[0], dims, p) as f64,
                s * sample_linear(&level.grad[1], dims, p) as f64,
                s * sample_linear(&level.grad[2], dims, p) as f64,
            ]
        })
        .collect();
    (cost / n, field.adjoint(g, support, &per_voxel))
}

fn level_cost(level: &Level, field: &BSplineField, support: &[super::bspline::AxisSupport; 3]) -> f64 {
    let dense = field.dense_with(level.fixed.geom(), support);
    warped_ssd(&level.fixed, &level.moving, &dense)
}

/// Registers `moving` onto `fixed`: the returned field `d` makes
/// `moving(x + d(x))` approximate `fixed(x)`.
pub fn register(fixed: &Volume, moving: &Volume, params: &RegistrationParams) -> Result<Registration> {
    fixed.geom().check_same(moving.geom())?;
    if params.levels == 0 {
        return Err(Error::Precondition("registration needs at least one level".into()));
    }
    let geom: &Geometry = fixed.geom();
    let coarse = params
        .coarse_grid_spacing
        .unwrap_or_else(|| geom.extent().map(|e| (e / 4.0).max(1e-3)));

    // Pyramid: index 0 is full resolution.
    let mut pyramid = vec![(fixed.clone(), moving.clone())];
    for _ in 1..params.levels {
        let (f, m) = pyramid.last().unwrap();
        pyramid.push((downsample2(f), downsample2(m)));
    }

    let initial_ssd = ssd(fixed, moving);
    let mut trace: Vec<Vec<f64>> = Vec::new();
    let flat = |t: &Vec<Vec<f64>>| t.iter().flatten().copied().collect::<Vec<_>>();
    let mut field = BSplineField::zeros(geom, coarse)?;
    let min_spacing = geom.spacing.iter().cloned().fold(f64::INFINITY, f64::min);

    for l in 0..params.levels {
        if l > 0 {
            field = field.refine(geom)?;
        }
        let (f, m) = &pyramid[params.levels - 1 - l];
        let level = Level {
            fixed: f.clone(),
            grad: gradient(m),
            moving: m.clone(),
        };
        let support = field.support(level.fixed.geom())?;
        let scale = (1usize << (params.levels - 1 - l)) as f64;
        let mut step = params.step * scale;
        let min_step = 0.01 * min_spacing;
        let (mut cost, mut grad) = cost_and_gradient(&level, &field, &support);
        if !cost.is_finite() {
            return Err(Error::Convergence { trace: flat(&trace) });
        }
        let mut level_trace = vec![cost];
        let mut accepted = 0;
        while accepted < params.iterations && step >= min_step {
            let gmax = grad
                .iter()
                .flat_map(|g| g.iter())
                .fold(0.0f64, |m, &v| m.max(v.abs()));
            if gmax == 0.0 {
                break;
            }
            let mut candidate = field.clone();
            for (d, g) in candidate.displacements.iter_mut().zip(&grad) {
                for a in 0..3 {
                    d[a] -= step * g[a] / gmax;
                }
            }
            let c = level_cost(&level, &candidate, &support);
            if !c.is_finite() {
                trace.push(level_trace);
                return Err(Error::Convergence { trace: flat(&trace) });
            }
            if c < cost {
                field = candidate;
                let (nc, ng) = cost_and_gradient(&level, &field, &support);
                cost = nc;
                grad = ng;
                level_trace.push(cost);
                accepted += 1;
            } else {
                step *= 0.5;
            }
        }
        trace.push(level_trace);
    }

    let final_ssd = warped_ssd(fixed, moving, &field.dense(geom)?);
    if !(final_ssd <= initial_ssd) || !field.is_finite() {
        let mut t = flat(&trace);
        t.push(final_ssd);
        return Err(Error::Convergence { trace: t });
    }
    Ok(Registration {
        field,
        ssd_trace: trace,
        initial_ssd,
        final_ssd,
    })
}
