use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::affine::{fit_affine_lsq, Affine2D, Correspondences};
use crate::error::{Error, Result};

/// Redraws allowed per iteration when a sample is degenerate.
const MAX_REDRAWS: usize = 32;
/// Minimal samples whose triangle area is below this are redrawn, px².
const MIN_SAMPLE_AREA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams {
    /// Maximum reprojection distance of an inlier, pixels.
    pub inlier_threshold: f64,
    pub max_iters: usize,
    /// Probability used to shrink the iteration bound adaptively.
    pub confidence: f64,
    /// Absolute floor on the consensus size.
    pub min_inliers: usize,
    /// The effective floor is `max(min_inliers, ceil(min_inlier_fraction * n))`.
    pub min_inlier_fraction: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            inlier_threshold: 3.0,
            max_iters: 500,
            confidence: 0.99,
            min_inliers: 10,
            min_inlier_fraction: 0.1,
            seed: 0x5EED,
        }
    }
}

impl RansacParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.inlier_threshold > 0.0) {
            return Err(Error::Config("ransac.inlier_threshold must be > 0".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("ransac.max_iters must be >= 1".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::Config("ransac.confidence must be in (0, 1)".into()));
        }
        if self.min_inliers < 3 {
            return Err(Error::Config("ransac.min_inliers must be >= 3".into()));
        }
        if !(0.0..=1.0).contains(&self.min_inlier_fraction) {
            return Err(Error::Config("ransac.min_inlier_fraction must be in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn required_inliers(&self, n: usize) -> usize {
        let frac = (self.min_inlier_fraction * n as f64).ceil() as usize;
        self.min_inliers.max(frac)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacFit {
    pub transform: Affine2D,
    pub inliers: Vec<bool>,
    pub n_inliers: usize,
    pub iterations: usize,
}

fn triangle_area(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    0.5 * ((b.0 - a.0) * (c.1 - a.1) - (c.0 - a.0) * (b.1 - a.1)).abs()
}

fn sample3(rng: &mut ChaCha8Rng, n: usize) -> [usize; 3] {
    let i = rng.random_range(0..n);
    let mut j = rng.random_range(0..n - 1);
    if j >= i {
        j += 1;
    }
    let mut k = rng.random_range(0..n - 2);
    let (lo, hi) = (i.min(j), i.max(j));
    if k >= lo {
        k += 1;
    }
    if k >= hi {
        k += 1;
    }
    [i, j, k]
}

/// Number of iterations needed to draw one all-inlier triple with the
/// given confidence when a fraction `ratio` of pairs are inliers.
fn adaptive_bound(ratio: f64, confidence: f64, current: usize) -> usize {
    let p_good = ratio.powi(3);
    if p_good >= 1.0 {
        return 1;
    }
    if p_good <= 0.0 {
        return current;
    }
    let needed = (1.0 - confidence).ln() / (1.0 - p_good).ln();
    if needed.is_finite() && needed >= 0.0 {
        (needed.ceil() as usize).clamp(1, current)
    } else {
        current
    }
}

/// Robust affine estimate: minimal triples fitted exactly, largest consensus
/// kept, final least-squares refit over that consensus.
pub fn ransac_affine(c: &Correspondences, params: &RansacParams) -> Result<RansacFit> {
    let n = c.len();
    if n < 3 {
        return Err(Error::EstimationFailed(format!("{n} correspondences, need at least 3")));
    }
    let required = params.required_inliers(n);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(usize, Vec<bool>)> = None;
    let mut bound = params.max_iters;
    let mut iter = 0;
    let mut mask = vec![false; n];

    while iter < bound {
        iter += 1;
        let mut sample = None;
        for _ in 0..MAX_REDRAWS {
            let s = sample3(&mut rng, n);
            if triangle_area(c.src[s[0]], c.src[s[1]], c.src[s[2]]) >= MIN_SAMPLE_AREA {
                sample = Some(s);
                break;
            }
        }
        let Some(sample) = sample else { continue };
        let Ok(model) = fit_affine_lsq(c, &sample) else { continue };

        let mut count = 0;
        for (i, m) in mask.iter_mut().enumerate() {
            *m = c.residual(i, &model) <= params.inlier_threshold;
            count += usize::from(*m);
        }
        if best.as_ref().is_none_or(|(b, _)| count > *b) {
            bound = adaptive_bound(count as f64 / n as f64, params.confidence, bound);
            best = Some((count, mask.clone()));
        }
    }

    let Some((count, inliers)) = best else {
        return Err(Error::EstimationFailed("no non-degenerate sample found".into()));
    };
    if count < required {
        return Err(Error::EstimationFailed(format!(
            "consensus of {count} below the required {required}"
        )));
    }
    let subset: Vec<usize> = (0..n).filter(|&i| inliers[i]).collect();
    let transform = fit_affine_lsq(c, &subset)?;
    Ok(RansacFit {
        transform,
        inliers,
        n_inliers: count,
        iterations: iter,
    })
}
