//! Deformation checks on a 64×64×32 phantom.

use quadseg::deform::{apply_warp, bspline_weights, random_field, register, BSplineField, Interp, RegistrationParams};
use quadseg::phantom::{generate_phantom, preset};
use quadseg::{LabelVolume, Volume};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn phantom() -> (Volume, LabelVolume) {
    generate_phantom(&preset("young_male").unwrap(), [64, 64, 32], [3.0, 3.0, 6.0]).unwrap()
}

/// Worst deviation of the cubic B-spline weights from summing to one.
pub fn partition_of_unity_error(samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples)
        .map(|_| {
            let u: f64 = rng.gen_range(0.0..1.0);
            (bspline_weights(u).unwrap().iter().sum::<f64>() - 1.0).abs()
        })
        .fold(0.0, f64::max)
}

/// Mean endpoint error in voxels over the labelled region before and after
/// registering a phantom onto a randomly warped copy of itself.
pub fn registration_endpoint_error(seed: u64) -> (f64, f64) {
    let (moving, labels) = phantom();
    let geom = moving.geom().clone();
    let truth_field = random_field(&geom, [48.0, 48.0, 48.0], 12.0, seed).unwrap();
    let fixed = apply_warp(&moving, &truth_field, Interp::Linear).unwrap();
    let reg = register(&fixed, &moving, &RegistrationParams::default()).unwrap();
    let [nx, ny, nz] = geom.dims;
    let mut errs = Vec::new();
    let mut initial = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if labels.get(x, y, z) == 0 {
                    continue;
                }
                let p = geom.world(x, y, z);
                let a = reg.field.displacement_at(p).unwrap();
                let b = truth_field.displacement_at(p).unwrap();
                let e: f64 = (0..3).map(|k| ((a[k] - b[k]) / geom.spacing[k]).powi(2)).sum::<f64>().sqrt();
                errs.push(e);
                initial.push((0..3).map(|k| (b[k] / geom.spacing[k]).powi(2)).sum::<f64>().sqrt());
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    (mean(&initial), mean(&errs))
}

/// Whether a zero field leaves image and labels bit-for-bit unchanged.
pub fn zero_field_is_identity() -> bool {
    let (v, l) = phantom();
    let zero = BSplineField::zeros(v.geom(), [24.0; 3]).unwrap();
    apply_warp(&v, &zero, Interp::Linear).unwrap() == v && apply_warp(&l, &zero, Interp::Nearest).unwrap() == l
}
