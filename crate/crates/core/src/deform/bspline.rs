use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Geometry;

/// Uniform cubic B-spline basis at fractional position `u` in `[0, 1)`.
pub fn bspline_weights(u: f64) -> Result<[f64; 4]> {
    if !(0.0..1.0).contains(&u) {
        return Err(Error::Domain(format!("basis position {u} outside [0,1)")));
    }
    Ok(basis(u))
}

#[inline]
pub(crate) fn basis(u: f64) -> [f64; 4] {
    let u2 = u * u;
    let u3 = u2 * u;
    let v = 1.0 - u;
    [
        v * v * v / 6.0,
        (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0,
        (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0,
        u3 / 6.0,
    ]
}

/// Cubic B-spline free-form deformation: a lattice of control-point
/// displacements (mm). Control point `j` along an axis sits at
/// `grid_origin + j * grid_spacing`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BSplineField {
    pub grid_dims: [usize; 3],
    pub grid_spacing: [f64; 3],
    pub grid_origin: [f64; 3],
    /// x-fastest lattice of displacement vectors.
    pub displacements: Vec<[f64; 3]>,
}

/// Per-voxel support of the basis along one axis.
#[derive(Clone, Debug)]
pub(crate) struct AxisSupport {
    /// First of the four control indices.
    pub start: Vec<usize>,
    pub weights: Vec<[f64; 4]>,
}

impl BSplineField {
    /// Zero field whose lattice covers `geom` plus one cell on every side.
    pub fn zeros(geom: &Geometry, grid_spacing: [f64; 3]) -> Result<Self> {
        if grid_spacing.iter().any(|&h| !(h.is_finite() && h > 0.0)) {
            return Err(Error::Domain(format!("grid spacing {grid_spacing:?}")));
        }
        let extent = geom.extent();
        let grid_dims = [0, 1, 2].map(|a| (extent[a] / grid_spacing[a]).floor() as usize + 4);
        let grid_origin = [0, 1, 2].map(|a| geom.origin[a] - grid_spacing[a]);
        let n = grid_dims.iter().product();
        Ok(Self {
            grid_dims,
            grid_spacing,
            grid_origin,
            displacements: vec![[0.0; 3]; n],
        })
    }

    pub fn constant(geom: &Geometry, grid_spacing: [f64; 3], d: [f64; 3]) -> Result<Self> {
        let mut f = Self::zeros(geom, grid_spacing)?;
        f.displacements.iter_mut().for_each(|v| *v = d);
        Ok(f)
    }

    #[inline]
    pub fn control_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.grid_dims[0] * (j + self.grid_dims[1] * k)
    }

    pub fn is_finite(&self) -> bool {
        self.displacements.iter().all(|d| d.iter().all(|c| c.is_finite()))
    }

    /// Lattice cell and fraction for a world coordinate along `axis`.
    fn locate(&self, axis: usize, x: f64) -> Result<(usize, [f64; 4])> {
        let t = (x - self.grid_origin[axis]) / self.grid_spacing[axis];
        let cell = t.floor();
        if !(cell >= 1.0 && cell as usize + 2 < self.grid_dims[axis]) {
            return Err(Error::Domain(format!(
                "coordinate {x} on axis {axis} lies outside the control lattice"
            )));
        }
        let u = (t - cell).clamp(0.0, 1.0 - f64::EPSILON);
        Ok((cell as usize - 1, basis(u)))
    }

    /// Displacement (mm) at world point `x`.
    pub fn displacement_at(&self, x: [f64; 3]) -> Result<[f64; 3]> {
        let (i0, wx) = self.locate(0, x[0])?;
        let (j0, wy) = self.locate(1, x[1])?;
        let (k0, wz) = self.locate(2, x[2])?;
        let mut out = [0.0; 3];
        for c in 0..4 {
            for b in 0..4 {
                let wzy = wz[c] * wy[b];
                let row = self.control_index(i0, j0 + b, k0 + c);
                for a in 0..4 {
                    let w = wzy * wx[a];
                    let d = &self.displacements[row + a];
                    out[0] += w * d[0];
                    out[1] += w * d[1];
                    out[2] += w * d[2];
                }
            }
        }
        Ok(out)
    }

    pub(crate) fn support(&self, geom: &Geometry) -> Result<[AxisSupport; 3]> {
        let mut out: Vec<AxisSupport> = Vec::with_capacity(3);
        for axis in 0..3 {
            let mut start = Vec::with_capacity(geom.dims[axis]);
            let mut weights = Vec::with_capacity(geom.dims[axis]);
            for i in 0..geom.dims[axis] {
                let x = geom.origin[axis] + i as f64 * geom.spacing[axis];
                let (s, w) = self.locate(axis, x)?;
                start.push(s);
                weights.push(w);
            }
            out.push(AxisSupport { start, weights });
        }
        let mut it = out.into_iter();
        Ok([it.next().unwrap(), it.next().unwrap(), it.next().unwrap()])
    }

    /// Displacement at every voxel center of `geom`, x-fastest.
    pub fn dense(&self, geom: &Geometry) -> Result<Vec<[f64; 3]>> {
        let support = self.support(geom)?;
        Ok(self.dense_with(geom, &support))
    }

    pub(crate) fn dense_with(&self, geom: &Geometry, s: &[AxisSupport; 3]) -> Vec<[f64; 3]> {
        let [nx, ny, nz] = geom.dims;
        let gx = self.grid_dims[0];
        let gy = self.grid_dims[1];
        let mut out = Vec::with_capacity(geom.len());
        // Contract z and y first into a 4-row strip along x, reused for a whole image row.
        let mut strip = vec![[0.0f64; 3]; gx];
        for z in 0..nz {
            let (k0, wz) = (s[2].start[z], s[2].weights[z]);
            for y in 0..ny {
                let (j0, wy) = (s[1].start[y], s[1].weights[y]);
                strip.iter_mut().for_each(|v| *v = [0.0; 3]);
                for c in 0..4 {
                    for b in 0..4 {
                        let w = wz[c] * wy[b];
                        let base = gx * (j0 + b + gy * (k0 + c));
                        for (acc, d) in strip.iter_mut().zip(&self.displacements[base..base + gx]) {
                            acc[0] += w * d[0];
                            acc[1] += w * d[1];
                            acc[2] += w * d[2];
                        }
                    }
                }
                for x in 0..nx {
                    let (i0, wx) = (s[0].start[x], s[0].weights[x]);
                    let mut d = [0.0; 3];
                    for a in 0..4 {
                        let v = strip[i0 + a];
                        d[0] += wx[a] * v[0];
                        d[1] += wx[a] * v[1];
                        d[2] += wx[a] * v[2];
                    }
                    out.push(d);
                }
            }
        }
        out
    }

    /// Adjoint of [`dense_with`]: scatters per-voxel vectors onto control points.
    pub(crate) fn adjoint(&self, geom: &Geometry, s: &[AxisSupport; 3], per_voxel: &[[f64; 3]]) -> Vec<[f64; 3]> {
        let [nx, ny, nz] = geom.dims;
        let gx = self.grid_dims[0];
        let gy = self.grid_dims[1];
        let mut grad = vec![[0.0f64; 3]; self.displacements.len()];
        let mut strip = vec![[0.0f64; 3]; gx];
        for z in 0..nz {
            let (k0, wz) = (s[2].start[z], s[2].weights[z]);
            for y in 0..ny {
                let (j0, wy) = (s[1].start[y], s[1].weights[y]);
                strip.iter_mut().for_each(|v| *v = [0.0; 3]);
                let row = &per_voxel[nx * (y + ny * z)..nx * (y + ny * z) + nx];
                for (x, g) in row.iter().enumerate() {
                    let (i0, wx) = (s[0].start[x], s[0].weights[x]);
                    for a in 0..4 {
                        let v = &mut strip[i0 + a];
                        v[0] += wx[a] * g[0];
                        v[1] += wx[a] * g[1];
                        v[2] += wx[a] * g[2];
                    }
                }
                for c in 0..4 {
                    for b in 0..4 {
                        let w = wz[c] * wy[b];
                        let base = gx * (j0 + b + gy * (k0 + c));
                        for (acc, v) in grad[base..base + gx].iter_mut().zip(&strip) {
                            acc[0] += w * v[0];
                            acc[1] += w * v[1];
                            acc[2] += w * v[2];
                        }
                    }
                }
            }
        }
        grad
    }

    /// Exact dyadic refinement: a field with half the control spacing that
    /// reproduces this field everywhere the original lattice is defined.
    pub fn refine(&self, geom: &Geometry) -> Result<Self> {
        let half = self.grid_spacing.map(|h| h / 2.0);
        let mut fine = Self::zeros(geom, half)?;
        // Fine point m sits at coarse lattice coordinate (m + 1) / 2 + offset.
        let offset: [f64; 3] = [0, 1, 2].map(|a| (fine.grid_origin[a] - self.grid_origin[a]) / self.grid_spacing[a]);
        // Subdivision masks: knot points (1, 6, 1) / 8, midpoints (1, 1) / 2.
        let taps = |axis: usize, m: usize| -> Vec<(isize, f64)> {
            let pos = offset[axis] + m as f64 / 2.0;
            let j = pos.floor() as isize;
            if (pos - j as f64).abs() < 1e-9 {
                vec![(j - 1, 0.125), (j, 0.75), (j + 1, 0.125)]
            } else {
                vec![(j, 0.5), (j + 1, 0.5)]
            }
        };
        let tx: Vec<_> = (0..fine.grid_dims[0]).map(|m| taps(0, m)).collect();
        let ty: Vec<_> = (0..fine.grid_dims[1]).map(|m| taps(1, m)).collect();
        let tz: Vec<_> = (0..fine.grid_dims[2]).map(|m| taps(2, m)).collect();
        let get = |i: isize, j: isize, k: isize| -> [f64; 3] {
            let g = self.grid_dims;
            if i < 0 || j < 0 || k < 0 || i as usize >= g[0] || j as usize >= g[1] || k as usize >= g[2] {
                [0.0; 3]
            } else {
                self.displacements[self.control_index(i as usize, j as usize, k as usize)]
            }
        };
        for k in 0..fine.grid_dims[2] {
            for j in 0..fine.grid_dims[1] {
                for i in 0..fine.grid_dims[0] {
                    let mut d = [0.0; 3];
                    for &(ck, wk) in &tz[k] {
                        for &(cj, wj) in &ty[j] {
                            for &(ci, wi) in &tx[i] {
                                let w = wk * wj * wi;
                                let c = get(ci, cj, ck);
                                d[0] += w * c[0];
                                d[1] += w * c[1];
                                d[2] += w * c[2];
                            }
                        }
                    }
                    let idx = fine.control_index(i, j, k);
                    fine.displacements[idx] = d;
                }
            }
        }
        Ok(fine)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn geom() -> Geometry {
        Geometry::new([20, 18, 10], [1.5, 1.5, 3.0], [-4.0, 2.0, 0.0]).unwrap()
    }

    #[test]
    fn weights_at_knot() {
        let w = bspline_weights(0.0).unwrap();
        let expected = [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0, 0.0];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn weights_at_half() {
        let w = bspline_weights(0.5).unwrap();
        // (1/8)/6, (3/8 - 6/4 + 4)/6, (-3/8 + 3/4 + 3/2 + 1)/6, (1/8)/6
        let expected = [1.0 / 48.0, 23.0 / 48.0, 23.0 / 48.0, 1.0 / 48.0];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((w[0] - 0.020833333333).abs() < 1e-9);
        assert!((w[1] - 0.479166666666).abs() < 1e-9);
    }

    #[test]
    fn weights_mirror_symmetry() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let u: f64 = rng.gen_range(1e-6..1.0);
            let a = bspline_weights(u).unwrap();
            let b = bspline_weights(1.0 - u).unwrap();
            for i in 0..4 {
                assert!((a[i] - b[3 - i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weights_reject_out_of_range() {
        assert!(bspline_weights(1.0).is_err());
        assert!(bspline_weights(-0.1).is_err());
    }

    #[test]
    fn partition_of_unity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let w = bspline_weights(rng.gen_range(0.0..1.0)).unwrap();
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(w.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn constant_field_reproduced() {
        let g = geom();
        let f = BSplineField::constant(&g, [6.0, 6.0, 9.0], [2.0, 0.0, 0.0]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let e = g.extent();
        for _ in 0..1000 {
            let x = [0, 1, 2].map(|a| g.origin[a] + rng.gen_range(0.0..=e[a]));
            let d = f.displacement_at(x).unwrap();
            assert!((d[0] - 2.0).abs() < 1e-9 && d[1].abs() < 1e-12 && d[2].abs() < 1e-12);
        }
        for d in f.dense(&g).unwrap() {
            assert!((d[0] - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_control_point_matches_brute_force() {
        let g = geom();
        let mut f = BSplineField::zeros(&g, [6.0, 6.0, 9.0]).unwrap();
        let (ci, cj, ck) = (3, 2, 1);
        let idx = f.control_index(ci, cj, ck);
        f.displacements[idx] = [1.0, -2.0, 0.5];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let e = g.extent();
        for _ in 0..200 {
            let x = [0, 1, 2].map(|a| g.origin[a] + rng.gen_range(0.0..=e[a]));
            // Sum over every control point with the explicit piecewise basis.
            let mut expect = [0.0; 3];
            for k in 0..f.grid_dims[2] {
                for j in 0..f.grid_dims[1] {
                    for i in 0..f.grid_dims[0] {
                        let b = |axis: usize, c: usize| {
                            let t = (x[axis] - f.grid_origin[axis]) / f.grid_spacing[axis] - c as f64;
                            let t = t.abs();
                            if t < 1.0 {
                                (4.0 - 6.0 * t * t + 3.0 * t * t * t) / 6.0
                            } else if t < 2.0 {
                                (2.0 - t).powi(3) / 6.0
                            } else {
                                0.0
                            }
                        };
                        let w = b(0, i) * b(1, j) * b(2, k);
                        let d = f.displacements[f.control_index(i, j, k)];
                        for a in 0..3 {
                            expect[a] += w * d[a];
                        }
                    }
                }
            }
            let got = f.displacement_at(x).unwrap();
            for a in 0..3 {
                assert!((got[a] - expect[a]).abs() < 1e-12, "{got:?} vs {expect:?}");
            }
        }
    }

    #[test]
    fn outside_lattice_is_domain_error() {
        let g = geom();
        let f = BSplineField::zeros(&g, [6.0, 6.0, 9.0]).unwrap();
        assert!(matches!(f.displacement_at([-100.0, 2.0, 0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn dense_matches_pointwise_and_adjoint_is_transpose() {
        let g = geom();
        let mut f = BSplineField::zeros(&g, [6.0, 6.0, 9.0]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for d in f.displacements.iter_mut() {
            *d = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        }
        let s = f.support(&g).unwrap();
        let dense = f.dense_with(&g, &s);
        for (i, d) in dense.iter().enumerate().step_by(37) {
            let c = g.coords(i);
            let p = f.displacement_at(g.world(c[0], c[1], c[2])).unwrap();
            for a in 0..3 {
                assert!((d[a] - p[a]).abs() < 1e-12);
            }
        }
        // <A c, v> == <c, A^T v>
        let v: Vec<[f64; 3]> = (0..g.len()).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let lhs: f64 = dense.iter().zip(&v).map(|(a, b)| a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).sum();
        let at = f.adjoint(&g, &s, &v);
        let rhs: f64 = f.displacements.iter().zip(&at).map(|(a, b)| a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).sum();
        assert!((lhs - rhs).abs() < 1e-8 * lhs.abs().max(1.0));
    }

    #[test]
    fn refinement_is_exact() {
        let g = geom();
        let mut f = BSplineField::zeros(&g, [8.0, 8.0, 12.0]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        for d in f.displacements.iter_mut() {
            *d = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        }
        let fine = f.refine(&g).unwrap();
        assert_eq!(fine.grid_spacing, [4.0, 4.0, 6.0]);
        let a = f.dense(&g).unwrap();
        let b = fine.dense(&g).unwrap();
        for (p, q) in a.iter().zip(&b) {
            for k in 0..3 {
                assert!((p[k] - q[k]).abs() < 1e-9, "{p:?} vs {q:?}");
            }
        }
    }
}
