//! Overlap and surface-distance metrics between label volumes, in 3-D and
//! averaged over 2-D axial slices.

mod edt;
mod report;

pub use edt::squared_edt;
pub use report::{evaluation_csv, evaluation_markdown, EvalRow, MetricsReport, LabelMetrics, MetricMode, SliceMetrics};

use crate::error::{Error, Result};
use crate::volume::LabelVolume;
use crate::MAX_LABEL;

/// `2|A∩B| / (|A|+|B|)`; two empty sets score 1.
pub fn dice(a: &LabelVolume, b: &LabelVolume, label: u8) -> Result<f64> {
    a.geom().check_same(b.geom())?;
    Ok(dice_masks(a.data(), b.data(), label))
}

fn dice_masks(a: &[u8], b: &[u8], label: u8) -> f64 {
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        let (ia, ib) = (x == label, y == label);
        na += ia as usize;
        nb += ib as usize;
        inter += (ia && ib) as usize;
    }
    if na + nb == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (na + nb) as f64
    }
}

/// Indices of `label` voxels with at least one face neighbour that is not
/// `label`; positions beyond the grid count as outside. Only the axes listed
/// in `dims` are inspected, so two entries give in-plane surfaces.
pub fn surface_mask(labels: &[u8], dims: &[usize], label: u8) -> Vec<bool> {
    let mut strides = Vec::with_capacity(dims.len());
    let mut s = 1;
    for &n in dims {
        strides.push(s);
        s *= n;
    }
    labels
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if v != label {
                return false;
            }
            dims.iter().zip(&strides).any(|(&n, &st)| {
                let c = (i / st) % n;
                c == 0 || c + 1 == n || labels[i - st] != label || labels[i + st] != label
            })
        })
        .collect()
}

/// Surface voxel indices of `label` using the 6-neighbourhood.
pub fn surface_voxels(v: &LabelVolume, label: u8) -> Vec<usize> {
    surface_mask(v.data(), &v.dims(), label)
        .iter()
        .enumerate()
        .filter_map(|(i, &s)| s.then_some(i))
        .collect()
}

/// Symmetric surface distances: Hausdorff distance and mean absolute
/// distance in mm. `None` when the label is present in exactly one input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceDistances {
    pub hausdorff: f64,
    pub mean_absolute: f64,
}

pub(crate) fn surface_distances_raw(a: &[u8], b: &[u8], dims: &[usize], spacing: &[f64], label: u8) -> Option<SurfaceDistances> {
    let sa = surface_mask(a, dims, label);
    let sb = surface_mask(b, dims, label);
    let (any_a, any_b) = (sa.iter().any(|&x| x), sb.iter().any(|&x| x));
    match (any_a, any_b) {
        (false, false) => {
            return Some(SurfaceDistances {
                hausdorff: 0.0,
                mean_absolute: 0.0,
            })
        }
        (true, true) => {}
        _ => return None,
    }
    let directed = |from: &[bool], to: &[bool]| -> (f64, f64) {
        let dt = squared_edt(to, dims, spacing);
        let (mut max, mut sum, mut n) = (0.0f64, 0.0f64, 0usize);
        for (i, _) in from.iter().enumerate().filter(|(_, &s)| s) {
            let d = dt[i].sqrt();
            max = max.max(d);
            sum += d;
            n += 1;
        }
        (max, sum / n as f64)
    };
    let (hab, mab) = directed(&sa, &sb);
    let (hba, mba) = directed(&sb, &sa);
    Some(SurfaceDistances {
        hausdorff: hab.max(hba),
        mean_absolute: 0.5 * (mab + mba),
    })
}

pub fn surface_distances(a: &LabelVolume, b: &LabelVolume, label: u8) -> Result<Option<SurfaceDistances>> {
    a.geom().check_same(b.geom())?;
    Ok(surface_distances_raw(a.data(), b.data(), &a.dims(), &a.spacing(), label))
}

/// Symmetric surface Hausdorff distance in mm; `None` is "undefined".
pub fn hausdorff(a: &LabelVolume, b: &LabelVolume, label: u8) -> Result<Option<f64>> {
    Ok(surface_distances(a, b, label)?.map(|d| d.hausdorff))
}

/// Mean of the two directed mean surface distances in mm; `None` is "undefined".
pub fn mad(a: &LabelVolume, b: &LabelVolume, label: u8) -> Result<Option<f64>> {
    Ok(surface_distances(a, b, label)?.map(|d| d.mean_absolute))
}

fn foreground_labels() -> impl Iterator<Item = u8> {
    1..=MAX_LABEL
}

/// Dice, HD and MAD for every foreground label over the whole volume.
pub fn volume_metrics(a: &LabelVolume, b: &LabelVolume) -> Result<MetricsReport> {
    a.geom().check_same(b.geom())?;
    let labels = foreground_labels()
        .map(|l| {
            let d = surface_distances_raw(a.data(), b.data(), &a.dims(), &a.spacing(), l);
            LabelMetrics {
                label: l,
                dice: Some(dice_masks(a.data(), b.data(), l)),
                hd_mm: d.map(|d| d.hausdorff),
                mad_mm: d.map(|d| d.mean_absolute),
            }
        })
        .collect();
    Ok(MetricsReport::new(MetricMode::Volume3d, labels, Vec::new()))
}

/// Per-slice 2-D metrics with in-plane spacing, averaged per label over the
/// slices that contribute. A slice contributes to a label when the label is
/// present in either input; Dice uses every contributing slice, HD and MAD
/// only those where the label is present in both.
pub fn slicewise_metrics(a: &LabelVolume, b: &LabelVolume, labels: &[u8], slice_ids: &[usize]) -> Result<MetricsReport> {
    a.geom().check_same(b.geom())?;
    if slice_ids.is_empty() {
        return Err(Error::Precondition("no slices listed".into()));
    }
    let [nx, ny, nz] = a.dims();
    let sp = a.spacing();
    let plane = nx * ny;
    let mut per_slice = Vec::new();
    for &z in slice_ids {
        if z >= nz {
            return Err(Error::Domain(format!("slice {z} outside {nz} slices")));
        }
        let sa = &a.data()[z * plane..(z + 1) * plane];
        let sb = &b.data()[z * plane..(z + 1) * plane];
        for &l in labels {
            let present = sa.contains(&l) || sb.contains(&l);
            if !present {
                continue;
            }
            let d = surface_distances_raw(sa, sb, &[nx, ny], &sp[..2], l);
            per_slice.push(SliceMetrics {
                slice: z,
                label: l,
                dice: dice_masks(sa, sb, l),
                hd_mm: d.map(|d| d.hausdorff),
                mad_mm: d.map(|d| d.mean_absolute),
            });
        }
    }
    let mean = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    let label_rows = labels
        .iter()
        .map(|&l| {
            let rows: Vec<&SliceMetrics> = per_slice.iter().filter(|s| s.label == l).collect();
            LabelMetrics {
                label: l,
                dice: mean(rows.iter().map(|s| s.dice).collect()),
                hd_mm: mean(rows.iter().filter_map(|s| s.hd_mm).collect()),
                mad_mm: mean(rows.iter().filter_map(|s| s.mad_mm).collect()),
            }
        })
        .collect();
    Ok(MetricsReport::new(MetricMode::Slicewise2d, label_rows, per_slice))
}

/// Slices in which `truth` has any foreground voxel.
pub fn annotated_slices(truth: &LabelVolume) -> Vec<usize> {
    let [nx, ny, nz] = truth.dims();
    let plane = nx * ny;
    (0..nz)
        .filter(|&z| truth.data()[z * plane..(z + 1) * plane].iter().any(|&v| v != 0))
        .collect()
}
