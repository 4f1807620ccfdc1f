use crate::volume::{LabelVolume, ProbVolume, Volume};
use crate::NUM_CLASSES;

/// Length of a feature vector for patch radius `r`:
/// intensity, intensity patch, three coordinates, one-hot label patch,
/// five class probabilities.
pub fn feature_len(r: usize) -> usize {
    let p = (2 * r + 1).pow(3);
    1 + p + 3 + NUM_CLASSES * p + NUM_CLASSES
}

/// Voxels within Chebyshev distance `r` of any foreground voxel of `auto`.
pub fn working_roi(auto: &LabelVolume, r: usize) -> Vec<bool> {
    let dims = auto.dims();
    let mut mask: Vec<bool> = auto.data().iter().map(|&l| l != 0).collect();
    if r == 0 {
        return mask;
    }
    // A Chebyshev ball is a cube, so dilate one axis at a time.
    let mut stride = 1;
    for &n in &dims {
        let mut out = vec![false; mask.len()];
        for (i, o) in out.iter_mut().enumerate() {
            let c = (i / stride) % n;
            let lo = c.saturating_sub(r);
            let hi = (c + r).min(n - 1);
            let base = i - c * stride;
            *o = (lo..=hi).any(|k| mask[base + k * stride]);
        }
        mask = out;
        stride *= n;
    }
    mask
}

/// Reference box for the coordinate features: the bounding box of the
/// automatic segmentation's foreground, or the whole grid when it is empty.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CoordFrame {
    lo: [usize; 3],
    hi: [usize; 3],
}

impl CoordFrame {
    pub fn of(auto: &LabelVolume) -> Self {
        let g = auto.geom();
        let mut lo = g.dims;
        let mut hi = [0usize; 3];
        for (i, _) in auto.data().iter().enumerate().filter(|(_, &l)| l != 0) {
            let c = g.coords(i);
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
        }
        if lo[0] > hi[0] {
            return Self {
                lo: [0; 3],
                hi: g.dims.map(|d| d.saturating_sub(1)),
            };
        }
        Self { lo, hi }
    }

    /// Position of `c` along `axis`, 0 at the low face and 1 at the high face.
    pub fn coord(&self, axis: usize, c: usize) -> f32 {
        let (lo, hi) = (self.lo[axis], self.hi[axis]);
        if hi > lo {
            ((c as f32 - lo as f32) / (hi - lo) as f32).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }
}

/// Appends the features of voxel `(x, y, z)` to `out`. Patches clamp to the
/// border; `probs` of `None` contributes zeros.
pub fn extract_features(
    v: &Volume,
    auto: &LabelVolume,
    probs: Option<&ProbVolume>,
    frame: &CoordFrame,
    voxel: [usize; 3],
    r: usize,
    out: &mut Vec<f32>,
) {
    let [nx, ny, nz] = v.dims();
    let [x, y, z] = voxel;
    let g = v.geom();
    out.push(v.data()[g.index(x, y, z)]);
    let ri = r as isize;
    let clamp = |c: usize, d: isize, n: usize| (c as isize + d).clamp(0, n as isize - 1) as usize;
    let mut patch = Vec::with_capacity((2 * r + 1).pow(3));
    for dz in -ri..=ri {
        for dy in -ri..=ri {
            for dx in -ri..=ri {
                patch.push(g.index(clamp(x, dx, nx), clamp(y, dy, ny), clamp(z, dz, nz)));
            }
        }
    }
    out.extend(patch.iter().map(|&i| v.data()[i]));
    out.extend([frame.coord(0, x), frame.coord(1, y), frame.coord(2, z)]);
    for &i in &patch {
        let l = auto.data()[i] as usize;
        out.extend((0..NUM_CLASSES).map(|k| if k == l { 1.0 } else { 0.0 }));
    }
    match probs {
        Some(p) => out.extend(p.at(g.index(x, y, z))),
        None => out.extend([0.0; NUM_CLASSES]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Geometry;
    use proptest::prelude::*;

    #[test]
    fn closed_form_length() {
        assert_eq!(feature_len(1), 171);
    }

    #[test]
    fn single_voxel_roi_is_cube() {
        let g = Geometry::new([5, 5, 5], [1.0; 3], [0.0; 3]).unwrap();
        let l = LabelVolume::from_fn(g.clone(), |x, y, z| if [x, y, z] == [2, 2, 2] { 3 } else { 0 }).unwrap();
        assert_eq!(working_roi(&l, 1).iter().filter(|&&b| b).count(), 27);
        let empty = LabelVolume::filled(g, 0);
        assert!(!working_roi(&empty, 2).iter().any(|&b| b));
    }

    #[test]
    fn uniform_volume_and_corner_patch() {
        let g = Geometry::new([4, 4, 4], [1.0; 3], [0.0; 3]).unwrap();
        let v = Volume::filled(g.clone(), 7.5);
        let auto = LabelVolume::filled(g, 0);
        let mut f = Vec::new();
        extract_features(&v, &auto, None, &CoordFrame::of(&auto), [0, 0, 0], 1, &mut f);
        assert_eq!(f.len(), 171);
        assert!(f[..28].iter().all(|&x| x == 7.5));
        assert_eq!(&f[28..31], &[0.0, 0.0, 0.0]);
        assert!(f.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn coordinates_follow_the_segmentation_box() {
        let g = Geometry::new([10, 10, 3], [1.0; 3], [0.0; 3]).unwrap();
        let auto = LabelVolume::from_fn(g, |x, y, _| if (2..=6).contains(&x) && (4..=8).contains(&y) { 1 } else { 0 }).unwrap();
        let frame = CoordFrame::of(&auto);
        assert_eq!(frame.coord(0, 2), 0.0);
        assert_eq!(frame.coord(0, 4), 0.5);
        assert_eq!(frame.coord(0, 9), 1.0);
        assert_eq!(frame.coord(1, 6), 0.5);
        assert_eq!(frame.coord(2, 2), 1.0);
    }

    proptest! {
        #[test]
        fn roi_grows_with_radius(bits in proptest::collection::vec(0u8..5, 6 * 5 * 4)) {
            let g = Geometry::new([6, 5, 4], [1.0; 3], [0.0; 3]).unwrap();
            let sparse: Vec<u8> = bits.iter().enumerate().map(|(i, &b)| if i % 7 == 0 { b } else { 0 }).collect();
            let l = LabelVolume::new(g, sparse).unwrap();
            let r1 = working_roi(&l, 1);
            let r2 = working_roi(&l, 2);
            prop_assert!(r1.iter().zip(&r2).all(|(&a, &b)| !a || b));
        }
    }
}
