//! Volumes, label volumes and axial slices.
//!
//! Voxels are stored x-fastest: the linear index of `(x, y, z)` is
//! `x + nx * (y + ny * z)`. Axial slices are constant-z planes.

mod pgm;
mod qvol;

pub use pgm::{write_label_pgm, write_pgm};
pub use qvol::{load_labels, load_volume, load_intensity, save_qvol, save_probs, load_probs, LoadedVolume};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{MAX_LABEL, NUM_CLASSES};

/// Grid layout shared by a volume and its labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub dims: [usize; 3],
    /// Millimetres per voxel.
    pub spacing: [f64; 3],
    /// World position (mm) of voxel `(0, 0, 0)`.
    pub origin: [f64; 3],
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::format("dims", format!("{dims:?} has a zero extent")));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::format("spacing", format!("{spacing:?} must be positive")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::format("origin", format!("{origin:?} must be finite")));
        }
        Ok(Self { dims, spacing, origin })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slice_len(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [i % nx, (i / nx) % ny, i / (nx * ny)]
    }

    /// World position (mm) of a voxel center.
    pub fn world(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        [
            self.origin[0] + x as f64 * self.spacing[0],
            self.origin[1] + y as f64 * self.spacing[1],
            self.origin[2] + z as f64 * self.spacing[2],
        ]
    }

    /// Physical extent (mm) between the first and last voxel centers.
    pub fn extent(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| (self.dims[a] - 1) as f64 * self.spacing[a])
    }

    pub fn check_same(&self, other: &Geometry) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "geometry mismatch: {:?}/{:?} vs {:?}/{:?}",
                self.dims, self.spacing, other.dims, other.spacing
            )))
        }
    }
}

/// Element type of a [`Grid`].
pub trait Voxel: Copy + Default + PartialEq + Send + Sync + std::fmt::Debug + 'static {
    const DTYPE: &'static str;
    const KIND: &'static str;
    const BYTES: usize;

    fn check(self) -> Result<()>;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Voxel for f32 {
    const DTYPE: &'static str = "f32";
    const KIND: &'static str = "intensity";
    const BYTES: usize = 4;

    fn check(self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::Domain(format!("non-finite intensity {self}")))
        }
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
}

impl Voxel for u8 {
    const DTYPE: &'static str = "u8";
    const KIND: &'static str = "label";
    const BYTES: usize = 1;

    fn check(self) -> Result<()> {
        if self <= MAX_LABEL {
            Ok(())
        } else {
            Err(Error::Domain(format!("label value {self} exceeds {MAX_LABEL}")))
        }
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.push(self);
    }

    fn read_le(bytes: &[u8]) -> Self {
        bytes[0]
    }
}

/// A 3-D grid of voxels with geometry. See [`Volume`] and [`LabelVolume`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    geom: Geometry,
    data: Vec<T>,
}

/// Scalar intensity volume.
pub type Volume = Grid<f32>;
/// Label volume with values in `0..=4`.
pub type LabelVolume = Grid<u8>;

impl<T: Voxel> Grid<T> {
    pub fn new(geom: Geometry, data: Vec<T>) -> Result<Self> {
        if data.len() != geom.len() {
            return Err(Error::Truncated {
                expected: geom.len(),
                found: data.len(),
            });
        }
        for &v in &data {
            v.check()?;
        }
        Ok(Self { geom, data })
    }

    pub fn filled(geom: Geometry, value: T) -> Self {
        value.check().expect("fill value violates voxel invariant");
        let n = geom.len();
        Self { geom, data: vec![value; n] }
    }

    /// Builds a grid by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(geom: Geometry, mut f: impl FnMut(usize, usize, usize) -> T) -> Result<Self> {
        let [nx, ny, nz] = geom.dims;
        let mut data = Vec::with_capacity(geom.len());
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(geom, data)
    }

    /// Skips validation; callers guarantee the invariants.
    pub(crate) fn from_raw(geom: Geometry, data: Vec<T>) -> Self {
        debug_assert_eq!(geom.len(), data.len());
        Self { geom, data }
    }

    pub fn geom(&self) -> &Geometry {
        &self.geom
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geom.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.geom.spacing
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.geom.index(x, y, z)]
    }

    /// Sets one voxel, validating the new value.
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: T) -> Result<()> {
        value.check()?;
        let i = self.geom.index(x, y, z);
        self.data[i] = value;
        Ok(())
    }

    /// Reflects the grid along x. Applying it twice is the identity.
    pub fn mirror_x(&self) -> Self {
        let [nx, ny, nz] = self.geom.dims;
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks_exact(nx) {
            data.extend(row.iter().rev());
        }
        debug_assert_eq!(data.len(), nx * ny * nz);
        Self { geom: self.geom.clone(), data }
    }

    /// Axial (constant-z) planes in increasing z order.
    pub fn axial_slices(&self) -> Vec<Slice2D<T>> {
        extract_axial_slices(self)
    }

    pub fn axial_slice(&self, z: usize) -> Slice2D<T> {
        let n = self.geom.slice_len();
        Slice2D {
            dims: [self.geom.dims[0], self.geom.dims[1]],
            spacing: [self.geom.spacing[0], self.geom.spacing[1]],
            data: self.data[z * n..(z + 1) * n].to_vec(),
            slice_index: z,
        }
    }
}

impl Grid<u8> {
    /// Number of voxels carrying each label `0..=4`.
    pub fn label_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for &l in &self.data {
            counts[l as usize] += 1;
        }
        counts
    }

    pub fn mask(&self, label: u8) -> Vec<bool> {
        self.data.iter().map(|&l| l == label).collect()
    }
}

impl Grid<f32> {
    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Zero-mean, unit-variance copy. Statistics are taken over the bounding
    /// box of voxels brighter than the global mean.
    pub fn normalized(&self) -> Volume {
        let (mean, std) = self.foreground_box_stats();
        let inv = if std > 1e-12 { 1.0 / std } else { 1.0 };
        let data = self
            .data
            .iter()
            .map(|&v| ((v as f64 - mean) * inv) as f32)
            .collect();
        Grid::from_raw(self.geom.clone(), data)
    }

    fn foreground_box_stats(&self) -> (f64, f64) {
        let threshold = self.mean();
        let mut lo = self.geom.dims;
        let mut hi = [0usize; 3];
        let mut any = false;
        for (i, &v) in self.data.iter().enumerate() {
            if v as f64 > threshold {
                let c = self.geom.coords(i);
                for a in 0..3 {
                    lo[a] = lo[a].min(c[a]);
                    hi[a] = hi[a].max(c[a]);
                }
                any = true;
            }
        }
        if !any {
            lo = [0; 3];
            hi = self.geom.dims.map(|d| d - 1);
        }
        let (mut sum, mut sq, mut n) = (0.0f64, 0.0f64, 0usize);
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    let v = self.get(x, y, z) as f64;
                    sum += v;
                    sq += v * v;
                    n += 1;
                }
            }
        }
        let mean = sum / n as f64;
        let var = (sq / n as f64 - mean * mean).max(0.0);
        (mean, var.sqrt())
    }
}

/// A constant-z plane of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Slice2D<T> {
    pub dims: [usize; 2],
    pub spacing: [f64; 2],
    pub data: Vec<T>,
    pub slice_index: usize,
}

pub fn extract_axial_slices<T: Voxel>(v: &Grid<T>) -> Vec<Slice2D<T>> {
    (0..v.geom.dims[2]).map(|z| v.axial_slice(z)).collect()
}

/// Stacks axial slices back into a grid; the inverse of [`extract_axial_slices`].
pub fn restack<T: Voxel>(slices: &[Slice2D<T>], spacing_z: f64, origin: [f64; 3]) -> Result<Grid<T>> {
    let first = slices
        .first()
        .ok_or_else(|| Error::Shape("cannot restack an empty slice list".into()))?;
    let mut data = Vec::with_capacity(first.data.len() * slices.len());
    for s in slices {
        if s.dims != first.dims || s.spacing != first.spacing {
            return Err(Error::Shape(format!(
                "slice {} has dims {:?}, expected {:?}",
                s.slice_index, s.dims, first.dims
            )));
        }
        if s.data.len() != s.dims[0] * s.dims[1] {
            return Err(Error::Shape(format!("slice {} data length mismatch", s.slice_index)));
        }
        data.extend_from_slice(&s.data);
    }
    let geom = Geometry::new(
        [first.dims[0], first.dims[1], slices.len()],
        [first.spacing[0], first.spacing[1], spacing_z],
        origin,
    )?;
    Grid::new(geom, data)
}

/// Per-class probabilities (or fusion votes) for every voxel, class-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbVolume {
    geom: Geometry,
    values: Vec<f32>,
}

impl ProbVolume {
    pub fn zeros(geom: Geometry) -> Self {
        let n = geom.len() * NUM_CLASSES;
        Self { geom, values: vec![0.0; n] }
    }

    pub fn from_classes(geom: Geometry, values: Vec<f32>) -> Result<Self> {
        if values.len() != geom.len() * NUM_CLASSES {
            return Err(Error::Truncated {
                expected: geom.len() * NUM_CLASSES,
                found: values.len(),
            });
        }
        Ok(Self { geom, values })
    }

    pub fn geom(&self) -> &Geometry {
        &self.geom
    }

    pub fn class(&self, k: usize) -> &[f32] {
        let n = self.geom.len();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn class_mut(&mut self, k: usize) -> &mut [f32] {
        let n = self.geom.len();
        &mut self.values[k * n..(k + 1) * n]
    }

    #[inline]
    pub fn at(&self, voxel: usize) -> [f32; NUM_CLASSES] {
        let n = self.geom.len();
        std::array::from_fn(|k| self.values[k * n + voxel])
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn mirror_x(&self) -> Self {
        let nx = self.geom.dims[0];
        let mut values = Vec::with_capacity(self.values.len());
        for row in self.values.chunks_exact(nx) {
            values.extend(row.iter().rev());
        }
        Self { geom: self.geom.clone(), values }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn geom(dims: [usize; 3]) -> Geometry {
        Geometry::new(dims, [1.0, 1.0, 2.0], [0.0; 3]).unwrap()
    }

    #[test]
    fn slices_come_out_in_z_order() {
        let v = Volume::filled(geom([3, 3, 5]), 0.0);
        let slices = extract_axial_slices(&v);
        assert_eq!(slices.len(), 5);
        for (k, s) in slices.iter().enumerate() {
            assert_eq!(s.dims, [3, 3]);
            assert_eq!(s.slice_index, k);
        }
    }

    #[test]
    fn slice_contains_only_its_plane() {
        let v = Volume::from_fn(geom([3, 3, 5]), |_, _, z| if z == 2 { 7.0 } else { 0.0 }).unwrap();
        let slices = extract_axial_slices(&v);
        assert!(slices[2].data.iter().all(|&x| x == 7.0));
        for k in [0, 1, 3, 4] {
            assert!(slices[k].data.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn restack_single_slice() {
        let s = Slice2D { dims: [2, 2], spacing: [1.0, 1.0], data: vec![1.0f32, 2.0, 3.0, 4.0], slice_index: 0 };
        let v = restack(&[s.clone()], 3.0, [0.0; 3]).unwrap();
        assert_eq!(v.dims(), [2, 2, 1]);
        assert_eq!(v.data(), &s.data[..]);
    }

    #[test]
    fn restack_rejects_mixed_dims() {
        let a = Slice2D { dims: [3, 3], spacing: [1.0, 1.0], data: vec![0u8; 9], slice_index: 0 };
        let b = Slice2D { dims: [4, 3], spacing: [1.0, 1.0], data: vec![0u8; 12], slice_index: 1 };
        assert!(matches!(restack(&[a, b], 1.0, [0.0; 3]), Err(Error::Shape(_))));
    }

    #[test]
    fn mirror_swaps_pair() {
        let v = Volume::new(Geometry::new([2, 1, 1], [1.0; 3], [0.0; 3]).unwrap(), vec![1.0, 2.0]).unwrap();
        assert_eq!(v.mirror_x().data(), &[2.0, 1.0]);
        assert_eq!(v.mirror_x().mirror_x(), v);
    }

    #[test]
    fn label_volume_rejects_out_of_range() {
        let err = LabelVolume::new(geom([2, 1, 1]), vec![0, 5]).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn volume_rejects_nan() {
        assert!(Volume::new(geom([1, 1, 1]), vec![f32::NAN]).is_err());
    }

    #[test]
    fn normalized_has_unit_stats_on_constant_box() {
        let v = Volume::from_fn(geom([8, 8, 2]), |x, y, _| (x * y) as f32).unwrap();
        let n = v.normalized();
        assert!(n.data().iter().all(|x| x.is_finite()));
    }

    proptest! {
        #[test]
        fn extract_restack_round_trip(nx in 1usize..6, ny in 1usize..6, nz in 1usize..6, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let g = Geometry::new([nx, ny, nz], [0.5, 0.7, 2.5], [1.0, -2.0, 3.0]).unwrap();
            let v = Volume::from_fn(g.clone(), |_, _, _| rng.gen_range(-10.0..10.0)).unwrap();
            let back = restack(&extract_axial_slices(&v), 2.5, g.origin).unwrap();
            prop_assert_eq!(back, v);
        }

        #[test]
        fn mirror_preserves_histogram(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let l = LabelVolume::from_fn(geom([5, 4, 3]), |_, _, _| rng.gen_range(0..=4)).unwrap();
            let m = l.mirror_x();
            prop_assert_eq!(m.label_counts(), l.label_counts());
            prop_assert_eq!(m.mirror_x(), l);
        }
    }
}
