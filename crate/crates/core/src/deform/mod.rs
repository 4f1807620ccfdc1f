//! Cubic B-spline free-form deformation, registration and augmentation.

mod augment;
mod bspline;
pub mod filter;
mod random;
mod register;
mod warp;

pub use augment::{augment_dataset, propagate_labels, AugmentParams, Subject};
pub use bspline::{bspline_weights, BSplineField};
pub use random::{random_field, FOLD_FREE_FRACTION};
pub use register::{register, ssd, warped_ssd, Registration, RegistrationParams};
pub use warp::{apply_warp, Interp, Warpable};
