#![allow(dead_code)]

pub mod deform_checks;
pub mod erosion;
pub mod gradcheck;
pub mod overfit;
pub mod surface_oracle;
