//! Shi-Tomasi corners restricted to a foreground mask.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imgcore::{gradients, BinaryMask, RealImage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corner {
    pub x: f64,
    pub y: f64,
    /// Minimum eigenvalue of the windowed structure tensor.
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerParams {
    pub max_count: usize,
    /// Fraction of the strongest score a candidate must reach.
    pub quality_level: f64,
    /// Minimum Euclidean distance between accepted corners, pixels.
    pub min_distance: f64,
    /// Side of the structure-tensor window (odd).
    pub block_size: usize,
    /// Candidates need every mask pixel within this radius to be foreground.
    pub erosion_radius: usize,
}

impl Default for CornerParams {
    fn default() -> Self {
        Self {
            max_count: 4000,
            quality_level: 0.01,
            min_distance: 8.0,
            block_size: 5,
            erosion_radius: 0,
        }
    }
}

impl CornerParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_count == 0 {
            return Err(Error::Config("corners.max_count must be >= 1".into()));
        }
        if !(self.quality_level > 0.0 && self.quality_level <= 1.0) {
            return Err(Error::Config("corners.quality_level must be in (0, 1]".into()));
        }
        if !(self.min_distance >= 0.0) {
            return Err(Error::Config("corners.min_distance must be >= 0".into()));
        }
        if self.block_size < 3 || self.block_size.is_multiple_of(2) {
            return Err(Error::Config("corners.block_size must be odd and >= 3".into()));
        }
        Ok(())
    }
}

/// Smaller eigenvalue of the symmetric matrix `[a b; b c]`, clamped at zero.
#[inline]
pub fn min_eigenvalue(a: f64, b: f64, c: f64) -> f64 {
    let d = a - c;
    (((a + c) - (d * d + 4.0 * b * b).sqrt()) * 0.5).max(0.0)
}

/// Box sum over a `size x size` window with replicated borders.
fn box_sum(src: &[f64], w: usize, h: usize, size: usize) -> Vec<f64> {
    let r = (size / 2) as isize;
    let clampx = |x: isize| x.clamp(0, w as isize - 1) as usize;
    let clampy = |y: isize| y.clamp(0, h as isize - 1) as usize;
    let mut horiz = vec![0.0; w * h];
    horiz.par_chunks_mut(w).enumerate().for_each(|(y, out)| {
        let row = &src[y * w..(y + 1) * w];
        for (x, o) in out.iter_mut().enumerate() {
            *o = (-r..=r).map(|d| row[clampx(x as isize + d)]).sum();
        }
    });
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, out)| {
        for d in -r..=r {
            let sy = clampy(y as isize + d);
            let row = &horiz[sy * w..(sy + 1) * w];
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
    });
    out
}

/// Per-pixel Shi-Tomasi score: the smaller eigenvalue of the structure
/// tensor summed over a `block_size` window.
pub fn min_eig_map(img: &RealImage, block_size: usize) -> RealImage {
    let (w, h) = img.dims();
    let g = gradients(img);
    let (gx, gy) = (g.gx.data(), g.gy.data());
    let xx: Vec<f64> = gx.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = gx.iter().zip(gy).map(|(a, b)| a * b).collect();
    let yy: Vec<f64> = gy.iter().map(|v| v * v).collect();
    let sxx = box_sum(&xx, w, h, block_size);
    let sxy = box_sum(&xy, w, h, block_size);
    let syy = box_sum(&yy, w, h, block_size);
    let data = (0..w * h)
        .into_par_iter()
        .map(|i| min_eigenvalue(sxx[i], sxy[i], syy[i]))
        .collect();
    RealImage::new(w, h, data).expect("same dimensions as input")
}

fn is_local_max(score: &RealImage, x: usize, y: usize) -> bool {
    let v = score.get(x, y);
    let (w, h) = score.dims();
    let (x0, x1) = (x.saturating_sub(1), (x + 1).min(w - 1));
    let (y0, y1) = (y.saturating_sub(1), (y + 1).min(h - 1));
    (y0..=y1).all(|ny| (x0..=x1).all(|nx| score.get(nx, ny) <= v))
}

/// Greedy minimum-distance filter over a uniform grid of buckets.
struct SpacingGrid {
    cell: f64,
    cols: usize,
    rows: usize,
    buckets: Vec<Vec<(f64, f64)>>,
}

impl SpacingGrid {
    fn new(w: usize, h: usize, min_distance: f64) -> Self {
        let cell = min_distance.max(1.0);
        let cols = (w as f64 / cell).ceil() as usize + 1;
        let rows = (h as f64 / cell).ceil() as usize + 1;
        Self {
            cell,
            cols,
            rows,
            buckets: vec![Vec::new(); cols * rows],
        }
    }

    fn try_insert(&mut self, x: f64, y: f64, min_distance: f64) -> bool {
        let cx = (x / self.cell) as usize;
        let cy = (y / self.cell) as usize;
        if min_distance > 0.0 {
            let d2 = min_distance * min_distance;
            for by in cy.saturating_sub(1)..=(cy + 1).min(self.rows - 1) {
                for bx in cx.saturating_sub(1)..=(cx + 1).min(self.cols - 1) {
                    let clash = self.buckets[by * self.cols + bx]
                        .iter()
                        .any(|&(px, py)| (px - x).powi(2) + (py - y).powi(2) < d2);
                    if clash {
                        return false;
                    }
                }
            }
        }
        self.buckets[cy * self.cols + cx].push((x, y));
        true
    }
}

/// Strongest well-separated corners on foreground pixels, sorted by score
/// (descending). Corners sit on integer pixel positions.
pub fn good_features(img: &RealImage, fg: &BinaryMask, params: &CornerParams) -> Result<Vec<Corner>> {
    if img.dims() != fg.dims() {
        return Err(Error::DimensionMismatch {
            expected: img.dims(),
            actual: fg.dims(),
        });
    }
    let eroded;
    let fg = if params.erosion_radius > 0 {
        eroded = fg.erode(params.erosion_radius);
        &eroded
    } else {
        fg
    };
    if fg.count_foreground() == 0 {
        return Ok(Vec::new());
    }
    let score = min_eig_map(img, params.block_size);
    // The quality floor is relative to the strongest foreground score.
    let max_score = score
        .data()
        .iter()
        .zip(fg.labels())
        .filter(|(_, &f)| f)
        .map(|(&s, _)| s)
        .fold(0.0, f64::max);
    if max_score <= 0.0 {
        return Ok(Vec::new());
    }
    let threshold = params.quality_level * max_score;
    let (w, h) = score.dims();

    let mut candidates: Vec<Corner> = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            let score = &score;
            (0..w).filter_map(move |x| {
                let s = score.get(x, y);
                (s > 0.0 && s >= threshold && fg.get(x, y) && is_local_max(score, x, y)).then_some(
                    Corner {
                        x: x as f64,
                        y: y as f64,
                        score: s,
                    },
                )
            })
        })
        .collect();
    // Ties broken by raster order so the result is fully deterministic.
    candidates.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
    });

    let mut grid = SpacingGrid::new(w, h, params.min_distance);
    let mut accepted = Vec::new();
    for c in candidates {
        if accepted.len() >= params.max_count {
            break;
        }
        if grid.try_insert(c.x, c.y, params.min_distance) {
            accepted.push(c);
        }
    }
    Ok(accepted)
}
