//! Quadriceps head segmentation on thigh volumes.
//!
//! The crate bundles every stage of a multi-atlas + corrective learning
//! segmentation framework in which the registration/fusion step can be
//! swapped for a slice-wise U-Net:
//!
//! * [`volume`] – volume and label grids, axial slicing, the QVOL file format.
//! * [`phantom`] – synthetic thigh phantoms with four muscle heads.
//! * [`deform`] – cubic B-spline free-form deformation, registration and
//!   dataset augmentation with weak (propagated) labels.
//! * [`neural`] – dense tensor kernels with analytic gradients.
//! * [`unet`] – the U-Net, its training loop and slice-wise inference.
//! * [`cl`] – corrective learning with boosted decision stumps.
//! * [`jlf`] – joint label fusion baseline.
//! * [`metrics`] – Dice, Hausdorff distance and mean absolute surface distance.
//! * [`pipeline`] – orchestration behind the `quadseg` command line tool.

pub mod cl;
pub mod deform;
pub mod error;
pub mod jlf;
pub mod manifest;
pub mod metrics;
pub mod neural;
pub mod phantom;
pub mod pipeline;
pub mod unet;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{Geometry, LabelVolume, ProbVolume, Slice2D, Volume};

/// Background plus the four quadriceps heads.
pub const NUM_CLASSES: usize = 5;
/// Largest valid label value.
pub const MAX_LABEL: u8 = 4;
