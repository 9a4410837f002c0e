//! Raster types and the low-level image operations everything else builds on.

mod gradient;
pub mod pnm;
mod pyramid;
mod raster;
pub mod sequence;

pub use gradient::{gradients, Gradients};
pub use pyramid::{build_pyramid, build_pyramid_real, Pyramid};
pub use raster::{to_grayscale, BinaryMask, ColorImage, GrayImage, RealImage};
