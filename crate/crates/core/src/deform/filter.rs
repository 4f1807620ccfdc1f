//! Smoothing and pyramid helpers for registration.

use crate::volume::{Geometry, Volume};

fn kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

fn convolve_axis(data: &[f64], dims: [usize; 3], axis: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as isize;
    let stride = [1, dims[0], dims[0] * dims[1]][axis];
    let n = dims[axis] as isize;
    let mut out = vec![0.0; data.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let pos = ((i / stride) % dims[axis]) as isize;
        let line0 = i as isize - pos * stride as isize;
        let mut acc = 0.0;
        for (t, w) in k.iter().enumerate() {
            let q = (pos + t as isize - r).clamp(0, n - 1);
            acc += w * data[(line0 + q * stride as isize) as usize];
        }
        *o = acc;
    }
    out
}

/// Separable Gaussian blur with per-axis sigma in voxels, replicate borders.
pub fn gaussian_smooth(v: &Volume, sigma: [f64; 3]) -> Volume {
    let dims = v.dims();
    let mut data: Vec<f64> = v.data().iter().map(|&x| x as f64).collect();
    for axis in 0..3 {
        if sigma[axis] > 0.0 && dims[axis] > 1 {
            data = convolve_axis(&data, dims, axis, &kernel(sigma[axis]));
        }
    }
    Volume::from_raw(v.geom().clone(), data.into_iter().map(|x| x as f32).collect())
}

/// Halves resolution along every axis with at least 8 voxels after a
/// [1 2 1]/4 blur. The origin is kept; spacing doubles on halved axes.
pub fn downsample2(v: &Volume) -> Volume {
    let g = v.geom();
    let halve = g.dims.map(|d| d >= 8);
    let mut data: Vec<f64> = v.data().iter().map(|&x| x as f64).collect();
    for axis in 0..3 {
        if halve[axis] {
            data = convolve_axis(&data, g.dims, axis, &[0.25, 0.5, 0.25]);
        }
    }
    let dims = [0, 1, 2].map(|a| if halve[a] { g.dims[a].div_ceil(2) } else { g.dims[a] });
    let spacing = [0, 1, 2].map(|a| if halve[a] { g.spacing[a] * 2.0 } else { g.spacing[a] });
    let step = halve.map(|h| if h { 2 } else { 1 });
    let geom = Geometry::new(dims, spacing, g.origin).expect("derived geometry is valid");
    let mut out = Vec::with_capacity(geom.len());
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                out.push(data[g.index(x * step[0], y * step[1], z * step[2])] as f32);
            }
        }
    }
    Volume::from_raw(geom, out)
}

/// Central-difference gradient in intensity per mm, one-sided at borders.
pub fn gradient(v: &Volume) -> [Vec<f32>; 3] {
    let g = v.geom();
    let d = v.data();
    std::array::from_fn(|axis| {
        let stride = [1, g.dims[0], g.dims[0] * g.dims[1]][axis];
        let n = g.dims[axis];
        let s = g.spacing[axis];
        (0..d.len())
            .map(|i| {
                if n < 2 {
                    return 0.0;
                }
                let pos = (i / stride) % n;
                let (lo, hi, span) = if pos == 0 {
                    (i, i + stride, 1.0)
                } else if pos == n - 1 {
                    (i - stride, i, 1.0)
                } else {
                    (i - stride, i + stride, 2.0)
                };
                ((d[hi] - d[lo]) as f64 / (span * s)) as f32
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothing_preserves_constants() {
        let g = Geometry::new([9, 7, 5], [1.0; 3], [0.0; 3]).unwrap();
        let v = Volume::filled(g, 3.5);
        let s = gaussian_smooth(&v, [1.5, 1.0, 0.5]);
        assert!(s.data().iter().all(|&x| (x - 3.5).abs() < 1e-5));
    }

    #[test]
    fn downsample_geometry() {
        let g = Geometry::new([64, 63, 6], [3.0, 3.0, 6.0], [1.0, 2.0, 3.0]).unwrap();
        let d = downsample2(&Volume::filled(g, 1.0));
        assert_eq!(d.dims(), [32, 32, 6]);
        assert_eq!(d.spacing(), [6.0, 6.0, 6.0]);
    }

    #[test]
    fn gradient_of_ramp() {
        let g = Geometry::new([6, 4, 3], [2.0, 1.0, 1.0], [0.0; 3]).unwrap();
        let v = Volume::from_fn(g, |x, _, _| 4.0 * x as f32).unwrap();
        let [gx, gy, gz] = gradient(&v);
        assert!(gx.iter().all(|&x| (x - 2.0).abs() < 1e-6));
        assert!(gy.iter().chain(&gz).all(|&x| x == 0.0));
    }
}
