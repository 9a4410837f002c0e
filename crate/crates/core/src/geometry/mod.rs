//! Affine model fitting and mask warping.

mod affine;
mod ransac;
mod warp;

pub use affine::{fit_affine_lsq, sum_squared_residual, Affine2D, Correspondences};
pub use ransac::{ransac_affine, RansacFit, RansacParams};
pub use warp::warp_mask;
