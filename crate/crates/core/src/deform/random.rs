use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::BSplineField;
use crate::error::{Error, Result};
use crate::volume::Geometry;

/// Largest admissible `max_disp` as a fraction of the smallest control
/// spacing; below this bound the cubic FFD cannot fold.
pub const FOLD_FREE_FRACTION: f64 = 0.4;

/// Random warp with i.i.d. uniform control displacements in `[-max_disp, max_disp]`.
pub fn random_field(geom: &Geometry, grid_spacing: [f64; 3], max_disp: f64, seed: u64) -> Result<BSplineField> {
    let bound = FOLD_FREE_FRACTION * grid_spacing.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(0.0..=bound).contains(&max_disp) {
        return Err(Error::Domain(format!(
            "max_disp {max_disp} mm exceeds the fold-free bound {bound} mm"
        )));
    }
    let mut field = BSplineField::zeros(geom, grid_spacing)?;
    if max_disp > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for d in field.displacements.iter_mut() {
            *d = std::array::from_fn(|_| rng.gen_range(-max_disp..=max_disp));
        }
    }
    Ok(field)
}
