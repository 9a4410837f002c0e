//! Helpers shared by the integration tests.
#![allow(dead_code)]

use maskprop::geometry::Affine2D;
use maskprop::imgcore::{BinaryMask, RealImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A smooth random intensity field defined everywhere, so shifted copies
/// can be rendered exactly at sub-pixel offsets.
pub struct Texture {
    waves: Vec<(f64, f64, f64, f64)>,
}

impl Texture {
    pub fn random(seed: u64) -> Self {
        let mut r = rng(seed);
        // Amplitude grows with wavelength, roughly like natural images.
        let waves = (0..32)
            .map(|_| {
                let wavelength: f64 = r.random_range(6.0f64.ln()..64.0f64.ln()).exp();
                let angle: f64 = r.random_range(0.0..TAU);
                let k = TAU / wavelength;
                let amp = wavelength * r.random_range(0.2..0.5);
                (k * angle.cos(), k * angle.sin(), r.random_range(0.0..TAU), amp)
            })
            .collect();
        Self { waves }
    }

    pub fn at(&self, x: f64, y: f64) -> f64 {
        128.0 + self.waves.iter().map(|(kx, ky, ph, a)| a * (kx * x + ky * y + ph).sin()).sum::<f64>()
    }

    /// The texture moved by `(dx, dy)`: a feature at `p` appears at `p + d`.
    pub fn render(&self, w: usize, h: usize, dx: f64, dy: f64) -> RealImage {
        RealImage::from_fn(w, h, |x, y| self.at(x as f64 - dx, y as f64 - dy))
    }
}

pub fn random_affine(r: &mut ChaCha8Rng) -> Affine2D {
    let deg: f64 = r.random_range(-30.0..30.0);
    let (s, c) = deg.to_radians().sin_cos();
    let (sx, sy) = (r.random_range(0.8..1.25), r.random_range(0.8..1.25));
    let shear = r.random_range(-0.1..0.1);
    Affine2D::new(
        [[sx * c, -sy * s + shear], [sx * s, sy * c]],
        [r.random_range(-40.0..40.0), r.random_range(-40.0..40.0)],
    )
}

/// `n` points spread over a 400x300 area, not all collinear.
pub fn random_points(r: &mut ChaCha8Rng, n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|_| (r.random_range(0.0..400.0), r.random_range(0.0..300.0)))
        .collect()
}

pub fn random_blob_mask(r: &mut ChaCha8Rng, w: usize, h: usize) -> BinaryMask {
    let blobs: Vec<(f64, f64, f64)> = (0..r.random_range(1..4))
        .map(|_| {
            (
                r.random_range(0.0..w as f64),
                r.random_range(0.0..h as f64),
                r.random_range(4.0..(w.min(h) as f64 / 2.0)),
            )
        })
        .collect();
    BinaryMask::from_fn(w, h, |x, y| {
        blobs
            .iter()
            .any(|(cx, cy, rad)| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= rad * rad)
    })
}
